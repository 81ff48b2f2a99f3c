mod commands;
mod config;
mod error;
mod output;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{CommandOpts, Summary};
use config::RunConfig;
use error::{CliError, CliResult};
use output::Output;

#[derive(Parser, Debug)]
#[command(name = "curlhom", version, about = "Higher-order homogenisation of periodic curl-curl problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form laminate constants, tensors, identities and spectral cross-check
    Laminate(Common),
    /// Cell correctors, homogenised tensors and both coefficient families
    Hierarchy(Common),
    /// Remainder orders and energy bounds against the exact laminate fine solve
    Convergence(Common),
    /// Identity checks; exits nonzero if any fails
    Checks {
        #[command(flatten)]
        common: Common,
        /// Corrupt hat h^(3) before the equivalence check (self-test)
        #[arg(long)]
        inject_fault: bool,
    },
    /// Constitutive-law equivalence and quasistatic energies
    Constitutive(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration; defaults apply to omitted keys
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out` in the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads
    #[arg(long)]
    threads: Option<usize>,
    /// Also write SVG plots where the command has any
    #[arg(long)]
    plot: bool,
    /// Override a config field, e.g. --set grid_n=64 --set tolerances.law=1e-6
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn run(cli: Cli) -> CliResult<Summary> {
    let (name, common, inject_fault) = match &cli.command {
        Command::Laminate(c) => ("laminate", c, false),
        Command::Hierarchy(c) => ("hierarchy", c, false),
        Command::Convergence(c) => ("convergence", c, false),
        Command::Checks { common, inject_fault } => ("checks", common, *inject_fault),
        Command::Constitutive(c) => ("constitutive", c, false),
    };
    let cfg = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Threads(e.to_string()))?;
    }
    let dir = common.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out").join(name));
    let opts = CommandOpts { plot: common.plot, inject_fault };
    execute(name, &cfg, &dir, opts)
}

pub(crate) fn execute(name: &str, cfg: &RunConfig, dir: &std::path::Path, opts: CommandOpts) -> CliResult<Summary> {
    let mut out = Output::create(dir, name, cfg)?;
    let summary = match name {
        "laminate" => commands::cmd_laminate(cfg, &mut out, opts)?,
        "hierarchy" => commands::cmd_hierarchy(cfg, &mut out, opts)?,
        "convergence" => commands::cmd_convergence(cfg, &mut out, opts)?,
        "checks" => commands::cmd_checks(cfg, &mut out, opts)?,
        "constitutive" => commands::cmd_constitutive(cfg, &mut out, opts)?,
        other => return Err(CliError::Config(format!("unknown command {other}"))),
    };
    println!("config {}", out.hash());
    out.finish()?;
    Ok(summary)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(s) => {
            for l in &s.lines {
                println!("{l}");
            }
            if s.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("one or more checks failed");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
