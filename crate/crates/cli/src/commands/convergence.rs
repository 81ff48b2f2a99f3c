use curlhom::fine::{energy_suite, remainder_report, EnergyReport};
use serde_json::json;

use super::{laminate_opts, problem, CommandOpts, Summary};
use crate::config::{CoefficientSpec, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::Output;
use crate::plot::{loglog, Series};

/// Largest truncation order the laminate fine comparison supports.
pub const MAX_ORDER: usize = 3;

/// Remainder norms against the exact laminate fine solve for every (K, eps),
/// fitted orders, and the energy suite per K.
pub fn cmd_convergence(cfg: &RunConfig, out: &mut Output, opts: CommandOpts) -> CliResult<Summary> {
    let CoefficientSpec::Laminate { .. } = cfg.coefficient else {
        return Err(CliError::Infeasible(format!(
            "convergence studies need the exact laminate fine solver; a {} coefficient would need a 3D grid \
             resolving eps = {:?} on a torus of side {}, which grid_n = {} cannot",
            cfg.coefficient.name(),
            cfg.eps,
            cfg.period,
            cfg.grid_n
        )));
    };
    if cfg.eps.len() < 3 {
        return Err(CliError::Infeasible(format!("{} eps values given; slope fits need at least 3", cfg.eps.len())));
    }
    if let Some(k) = cfg.orders.iter().find(|&&k| k > MAX_ORDER) {
        return Err(CliError::Infeasible(format!("truncation order {k} exceeds {MAX_ORDER}")));
    }
    let profile = cfg.coefficient.profile()?;
    let p = problem(cfg)?;
    let lo = laminate_opts(cfg);
    let report = remainder_report(&p, &profile, &cfg.orders, &cfg.eps, &lo)?;
    out.csv("convergence.csv", &report.to_csv())?;
    let mut slopes = String::from("K,norm,slope,stderr\n");
    for s in &report.slopes {
        for (name, f) in [("curl", &s.curl), ("div_hminus1", &s.div_hminus1), ("l2", &s.l2)] {
            slopes += &format!("{},{name},{},{}\n", s.order, f.slope, f.stderr);
        }
    }
    out.csv("slopes.csv", &slopes)?;

    // energy slopes need a nonzero gap; a homogeneous medium has none
    let mut energies: Vec<(usize, Result<EnergyReport, String>)> = Vec::new();
    for &k in &cfg.orders {
        let e = energy_suite(&p, &profile, k, &cfg.eps, cfg.shifts, cfg.trials, cfg.seed, &lo).map_err(|e| e.to_string());
        energies.push((k, e));
    }
    let mut ecsv = String::from(
        "K,eps,fine_energy,averaged_energy,truncated_energy,gap,partial_gap,min_trial_excess,ordering_holds,averaged_field_error\n",
    );
    for (k, e) in &energies {
        if let Ok(e) = e {
            for r in &e.rows {
                ecsv += &format!(
                    "{k},{},{},{},{},{},{},{},{},{}\n",
                    r.eps,
                    r.fine_energy,
                    r.averaged_energy,
                    r.truncated_energy,
                    r.gap,
                    r.partial_gap,
                    r.min_trial_excess,
                    r.ordering_holds,
                    r.averaged_field_error
                );
            }
        }
    }
    out.csv("energy.csv", &ecsv)?;
    let energy_doc: Vec<_> = energies
        .iter()
        .map(|(k, e)| match e {
            Ok(r) => json!({ "order": k, "report": r }),
            Err(msg) => json!({ "order": k, "error": msg }),
        })
        .collect();
    out.json("convergence.json", &json!({ "remainders": report, "energy": energy_doc }))?;

    if opts.plot {
        let mut series = Vec::new();
        for &k in &cfg.orders {
            let rows: Vec<_> = report.rows.iter().filter(|r| r.order == k).collect();
            series.push(Series { label: format!("K={k} curl"), points: rows.iter().map(|r| (r.eps, r.curl)).collect() });
            series.push(Series {
                label: format!("K={k} div H^-1"),
                points: rows.iter().map(|r| (r.eps, r.div_hminus1)).collect(),
            });
        }
        out.svg("convergence.svg", &loglog("Remainder norms", "eps", "norm", &series))?;
        let gaps: Vec<Series> = energies
            .iter()
            .filter_map(|(k, e)| e.as_ref().ok().map(|e| (k, e)))
            .map(|(k, e)| Series { label: format!("K={k} gap"), points: e.rows.iter().map(|r| (r.eps, r.gap)).collect() })
            .collect();
        out.svg("energy.svg", &loglog("Truncated energy minus averaged energy", "eps", "gap", &gaps))?;
    }

    let mut lines = Vec::new();
    for s in &report.slopes {
        lines.push(format!(
            "K={}: curl slope {:.3}, div H^-1 slope {:.3}, L2 slope {:.3}",
            s.order, s.curl.slope, s.div_hminus1.slope, s.l2.slope
        ));
    }
    for (k, e) in &energies {
        lines.push(match e {
            Ok(e) => format!(
                "K={k}: ordering holds at every eps: {}, gap slope {:.3}, averaged field slope {:.3}",
                e.rows.iter().all(|r| r.ordering_holds),
                e.gap_slope.slope,
                e.averaged_field_slope.slope
            ),
            Err(msg) => format!("K={k}: energy suite skipped ({msg})"),
        });
    }
    Ok(Summary::ok(lines))
}
