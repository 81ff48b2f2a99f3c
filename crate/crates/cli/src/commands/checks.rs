use std::f64::consts::PI;

use curlhom::cell::layered::LayeredMedium;
use curlhom::cell::spectral::SpectralMedium;
use curlhom::cell::{symmetrize_groups, CellHierarchy, CellMedium};
use curlhom::fine::{fit_slope, oscillation_decay, poincare_check, random_band_limited};
use curlhom::tensor::{symmetrize, tilde_tilde, ConstTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{CommandOpts, Summary};
use crate::config::{CoefficientSpec, RunConfig};
use crate::error::CliResult;
use crate::output::Output;

#[derive(Clone, Debug, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    /// "below" when value must stay under the tolerance, "above" otherwise.
    pub sense: &'static str,
    pub passed: bool,
}

impl CheckLine {
    fn below(name: String, value: f64, tolerance: f64) -> CheckLine {
        CheckLine { name, value, tolerance, sense: "below", passed: value < tolerance }
    }

    fn above(name: String, value: f64, tolerance: f64) -> CheckLine {
        CheckLine { name, value, tolerance, sense: "above", passed: value > tolerance }
    }
}

/// Symmetrised deviation between hat h^(n+2) and the signed pair sum,
/// relative to the largest of the two and hat h^(2).
fn equivalence<M: CellMedium>(h: &CellHierarchy<M>, n: usize, fault: bool) -> CliResult<f64> {
    let mut hat = h.hat_h(n + 2)?.clone();
    let h2 = h.hat_h(2)?.max_abs();
    if fault {
        let mut e = hat.entries().to_vec();
        e[1] += 1e-3 * h2;
        hat = ConstTensor::from_entries(hat.order(), e)?;
    }
    let tt = tilde_tilde(&h.tilde_pairs(n)?, n)?;
    let scale = hat.max_abs().max(tt.max_abs()).max(h2);
    Ok(symmetrize(&hat).max_abs_diff(&symmetrize(&tt)) / scale)
}

/// Largest relative deviation between the two pair-tensor formulas after
/// symmetrising each derivative group, over j + k <= nmax.
fn pair_formulas<M: CellMedium>(h: &CellHierarchy<M>, nmax: usize) -> CliResult<f64> {
    let mut worst: f64 = 0.0;
    for s in 0..=nmax {
        for j in 0..=s {
            let k = s - j;
            let a = h.tilde_h_direct(j, k)?;
            let b = h.tilde_h_alternative(j, k)?;
            let d = symmetrize_groups(&a, j, k).max_abs_diff(&symmetrize_groups(&b, j, k));
            worst = worst.max(d / a.max_abs().max(h.hat_h(2)?.max_abs()));
        }
    }
    Ok(worst)
}

fn hierarchy_checks<M: CellMedium>(h: &CellHierarchy<M>, nmax: usize, tol: f64, fault: bool) -> CliResult<Vec<CheckLine>> {
    let mut out = Vec::new();
    for n in 0..=nmax {
        // the fault goes into hat h^(3)
        let d = equivalence(h, n, fault && n == 1)?;
        out.push(CheckLine::below(format!("equivalence n={n}"), d, tol));
    }
    out.push(CheckLine::below("pair formulas".into(), pair_formulas(h, nmax)?, tol));
    Ok(out)
}

/// Equivalence (n <= 3 on laminates, n <= 2 otherwise), pair formulas,
/// Poincare bound and oscillation decay. Failing checks make the summary fail.
pub fn cmd_checks(cfg: &RunConfig, out: &mut Output, opts: CommandOpts) -> CliResult<Summary> {
    let tol = &cfg.tolerances;
    let mut lines = match &cfg.coefficient {
        CoefficientSpec::Laminate { .. } => {
            let h = CellHierarchy::build(LayeredMedium::new(&cfg.coefficient.profile()?), 4)?;
            hierarchy_checks(&h, 3, tol.equivalence_laminate, opts.inject_fault)?
        }
        other => {
            let h = CellHierarchy::build(SpectralMedium::from_smooth(cfg.grid_n, &other.smooth())?, 3)?;
            hierarchy_checks(&h, 2, tol.equivalence_general, opts.inject_fault)?
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fields = (0..100)
        .map(|_| {
            let band = rng.gen_range(1..=4);
            let modes = rng.gen_range(1..=8);
            random_band_limited(cfg.period, band, modes, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let pc = poincare_check(&fields);
    let worst = pc.rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let mut bound = CheckLine::below("poincare worst ratio".into(), worst, 1.0);
    bound.passed = pc.all_hold;
    lines.push(bound);
    lines.push(CheckLine::below("poincare identity defect".into(), pc.max_identity_defect, tol.identity_defect));

    // band-limited g integrates to zero against any cell oscillation faster than it
    let t = cfg.period;
    let band_eps: Vec<f64> = (2..=5).map(|m| t / m as f64).collect();
    let cell = |y: [f64; 3]| (2.0 * PI * y[0]).sin();
    let g = move |x: [f64; 3]| (2.0 * PI * x[0] / t).sin();
    let rows = oscillation_decay(&cell, &g, t, &band_eps, 32)?;
    let band_max = rows.iter().map(|r| r.integral).fold(0.0, f64::max);
    lines.push(CheckLine::below("oscillation band-limited".into(), band_max, tol.oscillation * t.powi(3)));
    let cell = |y: [f64; 3]| (2.0 * PI * y[0]).cos();
    let g = move |x: [f64; 3]| (2.0 * PI * x[0] / t).cos().exp();
    let rows = oscillation_decay(&cell, &g, t, &band_eps, 48)?;
    let e: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let v: Vec<f64> = rows.iter().map(|r| r.integral).collect();
    lines.push(CheckLine::above("oscillation smooth decay order".into(), fit_slope(&e, &v)?.slope, 3.0));

    let passed = lines.iter().all(|l| l.passed);
    out.json("checks.json", &serde_json::json!({ "passed": passed, "fault_injected": opts.inject_fault, "checks": lines }))?;
    let mut csv = String::from("name,value,tolerance,sense,passed\n");
    for l in &lines {
        csv += &format!("{},{:e},{:e},{},{}\n", l.name, l.value, l.tolerance, l.sense, l.passed);
    }
    out.csv("checks.csv", &csv)?;
    Ok(Summary {
        passed,
        lines: lines
            .iter()
            .map(|l| format!("{} {}: {:.3e} ({} {:.1e})", if l.passed { "PASS" } else { "FAIL" }, l.name, l.value, l.sense, l.tolerance))
            .collect(),
    })
}
