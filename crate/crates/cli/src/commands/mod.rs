mod checks;
mod constitutive;
mod convergence;
mod hierarchy;
mod laminate;

pub use checks::cmd_checks;
pub use constitutive::cmd_constitutive;
pub use convergence::cmd_convergence;
pub use hierarchy::cmd_hierarchy;
pub use laminate::cmd_laminate;

use curlhom::fine::LaminateOptions;
use curlhom::homogenised::TorusProblem;

use crate::config::{source_field, RunConfig};
use crate::error::CliResult;

#[derive(Clone, Copy, Debug, Default)]
pub struct CommandOpts {
    pub plot: bool,
    /// Corrupt one homogenised tensor before the equivalence check.
    pub inject_fault: bool,
}

/// What a command reports back to main: whether its checks passed.
#[derive(Debug)]
pub struct Summary {
    pub passed: bool,
    pub lines: Vec<String>,
}

impl Summary {
    fn ok(lines: Vec<String>) -> Summary {
        Summary { passed: true, lines }
    }
}

pub(crate) fn laminate_opts(cfg: &RunConfig) -> LaminateOptions {
    LaminateOptions { degree: cfg.degree, subdivisions: cfg.subdivisions }
}

pub(crate) fn problem(cfg: &RunConfig) -> CliResult<TorusProblem> {
    let eps = cfg.eps.first().copied().unwrap_or(cfg.period);
    Ok(TorusProblem::new(cfg.period, eps, source_field(cfg.period, &cfg.source)?)?)
}
