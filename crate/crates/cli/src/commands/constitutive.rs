use std::collections::BTreeMap;

use curlhom::cell::layered::LayeredMedium;
use curlhom::cell::{magnetic_hierarchy, CellHierarchy, CellMedium};
use curlhom::constitutive::{
    effective_permeability_apply, electric_law_apply, energy_quasistatic, magnetic_homogenised_solve, quasistatic_reduce,
    variational_h_field,
};
use curlhom::fine::Stratified;
use curlhom::homogenised::{HomTensors, MacroField};
use curlhom::tensor::ConstTensor;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{laminate_opts, problem, CommandOpts, Summary};
use crate::config::{source_field, RunConfig, MAX_LEVELS};
use crate::error::{CliError, CliResult};
use crate::output::Output;

fn pairs_upto<M: CellMedium>(h: &CellHierarchy<M>, n: usize) -> CliResult<BTreeMap<(usize, usize), ConstTensor>> {
    let mut out = BTreeMap::new();
    for m in 0..=n {
        out.extend(h.tilde_pairs(m)?);
    }
    Ok(out)
}

/// Curl of a random three-mode potential with wavenumbers in [-2, 2].
fn random_curl_type(period: f64, rng: &mut ChaCha8Rng) -> CliResult<MacroField> {
    let mut pots: Vec<([i64; 3], [C64; 3])> = Vec::new();
    while pots.len() < 3 {
        let k = [0; 3].map(|_| rng.gen_range(-2i64..=2));
        if k == [0, 0, 0] || pots.iter().any(|(kk, _)| *kk == k || *kk == k.map(|v| -v)) {
            continue;
        }
        pots.push((k, [0; 3].map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))));
    }
    Ok(MacroField::curl_of(period, &pots)?)
}

fn rel_diff(a: &MacroField, b: &MacroField) -> CliResult<f64> {
    Ok(a.axpy(-1.0, b)?.l2_norm() / a.l2_norm().max(f64::MIN_POSITIVE))
}

/// Effective permeability and permittivity laws in both coefficient families,
/// the magnetic homogenised solve, and the quasistatic energy relations.
pub fn cmd_constitutive(cfg: &RunConfig, out: &mut Output, _opts: CommandOpts) -> CliResult<Summary> {
    let spec = &cfg.constitutive;
    let order = spec.order;
    if order + 2 > MAX_LEVELS {
        return Err(CliError::Config(format!("law order {order} needs {} levels, cap is {MAX_LEVELS}", order + 2)));
    }
    let mu = spec.permeability.profile()?;
    let pe = spec.permittivity.profile()?;
    let eps = cfg.eps.first().copied().unwrap_or(cfg.period);

    // H = mu^-1 B: the permeability law uses the hierarchy of mu^-1
    let hm = CellHierarchy::build(LayeredMedium::new(&mu.reciprocal()), order + 2)?;
    let hats = hm.hat_h_list();
    let pairs = pairs_upto(&hm, order)?;
    let mag = magnetic_hierarchy(LayeredMedium::new(&pe.reciprocal()), order + 2)?;
    let mag_hats = mag.0.hat_h_list();
    let mag_pairs = pairs_upto(&mag.0, order)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut mu_dev, mut el_dev): (f64, f64) = (0.0, 0.0);
    for _ in 0..spec.samples {
        let b = random_curl_type(cfg.period, &mut rng)?.scale(-1.0);
        let a = effective_permeability_apply(&hats, &b, eps, order)?;
        let v = variational_h_field(&pairs, &b, eps, order)?;
        mu_dev = mu_dev.max(rel_diff(&a, &v)?);
        let d = random_curl_type(cfg.period, &mut rng)?;
        let (e, ev) = electric_law_apply(&mag_hats, &mag_pairs, &d, eps, order)?;
        el_dev = el_dev.max(rel_diff(&e, &ev)?);
    }

    let j0 = problem(cfg)?.source;
    let j1 = source_field(cfg.period, &spec.current)?;
    let kmag = order.min(2);
    let t = HomTensors::from_hierarchy(&mag.0, Some(kmag))?;
    let msol = magnetic_homogenised_solve(&t, &j1, eps, kmag)?;
    let fields = quasistatic_reduce(&j0, &j1, &Stratified::Layers(mu), &Stratified::Layers(pe), eps, &laminate_opts(cfg))?;
    let energy = energy_quasistatic(&fields);

    let tol = cfg.tolerances.law;
    let passed =
        mu_dev < tol && el_dev < tol && energy.second_relation_deviation < tol && energy.first_relation_residual < tol;
    out.json(
        "constitutive.json",
        &json!({
            "eps": eps,
            "order": order,
            "samples": spec.samples,
            "permeability_law_deviation": mu_dev,
            "electric_law_deviation": el_dev,
            "magnetic_solve": {
                "order": kmag,
                "cascade_residual": msol.cascade_residual,
                "cascade_l2": msol.cascade.iter().map(|l| l.l2_norm()).collect::<Vec<_>>(),
                "truncated_l2": msol.truncated.l2_norm(),
            },
            "quasistatic": energy,
            "passed": passed,
        }),
    )?;
    let lines = vec![
        format!("permeability laws: max relative deviation {mu_dev:.3e}"),
        format!("electric laws: max relative deviation {el_dev:.3e}"),
        format!("magnetic cascade residual {:.3e}", msol.cascade_residual),
        format!(
            "quasistatic: second relation {:.3e}, first relation {:.3e}, magnetic energy {:.6e}",
            energy.second_relation_deviation, energy.first_relation_residual, energy.magnetic_energy
        ),
    ];
    Ok(Summary { passed, lines })
}
