// Shared property bodies. Compiled into both the core property tests and the
// cli acceptance target, so only curlhom, proptest and num-complex are used.
#![allow(dead_code)]

use std::f64::consts::PI;

use curlhom::cell::{symmetrize_groups, CellHierarchy};
use curlhom::cell::layered::LayeredMedium;
use curlhom::field::PeriodicField;
use curlhom::fine::laminate_hierarchy;
use curlhom::homogenised::{cascade, HomTensors, MacroField, TorusProblem};
use curlhom::laminate::LaminateProfile;
use num_complex::Complex64 as C64;
use proptest::prelude::*;

pub const CASES: u32 = 200;
pub const GRID: usize = 8;
/// Largest wavenumber per axis; stays clear of the Nyquist plane on GRID.
pub const BAND: i32 = 3;

/// One cosine term: component, wavevector, amplitude, phase.
pub type Term = (usize, [i32; 3], f64, f64);

pub fn terms(ncomp: usize) -> impl Strategy<Value = Vec<Term>> {
    prop::collection::vec(
        (0..ncomp, [-BAND..=BAND, -BAND..=BAND, -BAND..=BAND], -1.0..1.0f64, 0.0..2.0 * PI),
        1..6,
    )
}

fn eval_terms(ts: &[Term], comp: usize, y: [f64; 3]) -> f64 {
    ts.iter()
        .filter(|t| t.0 == comp)
        .map(|(_, k, a, ph)| a * (2.0 * PI * (k[0] as f64 * y[0] + k[1] as f64 * y[1] + k[2] as f64 * y[2]) + ph).cos())
        .sum()
}

fn flat(idx: &[usize]) -> usize {
    idx.iter().fold(0, |acc, &i| 3 * acc + i)
}

pub fn build_field(order: usize, ts: &[Term]) -> PeriodicField {
    PeriodicField::from_fn(order, GRID, |idx, y| eval_terms(ts, flat(idx), y)).unwrap()
}

fn scale(ts: &[Term]) -> f64 {
    ts.iter().map(|t| t.2.abs()).sum::<f64>().max(1.0)
}

pub fn curl_of_grad_vanishes(ts: &[Term]) -> Result<(), String> {
    let f = build_field(0, ts);
    let c = f.grad_t().and_then(|g| g.curl_t()).map_err(|e| e.to_string())?;
    let m = c.max_abs();
    // derivatives carry up to 2 pi BAND per application
    let tol = 1e-12 * scale(ts) * (2.0 * PI * BAND as f64).powi(2);
    (m <= tol).then_some(()).ok_or(format!("|curl grad| = {m:e} > {tol:e}"))
}

pub fn div_of_curl_vanishes(ts: &[Term]) -> Result<(), String> {
    let f = build_field(1, ts);
    let c = f.curl_t().and_then(|g| g.div_t()).map_err(|e| e.to_string())?;
    let m = c.max_abs();
    let tol = 1e-12 * scale(ts) * (2.0 * PI * BAND as f64).powi(2);
    (m <= tol).then_some(()).ok_or(format!("|div curl| = {m:e} > {tol:e}"))
}

pub fn parseval_holds(order: usize, ts: &[Term]) -> Result<(), String> {
    let f = build_field(order, ts);
    let (a, b) = (f.l2_norm(), f.spectral_l2_norm());
    let d = (a - b).abs();
    (d <= 1e-12 * scale(ts)).then_some(()).ok_or(format!("physical {a} vs spectral {b}"))
}

/// Shifting samples the translated field, shifts compose, and norms are kept.
pub fn shift_is_group_action(ts: &[Term], a: [f64; 3], b: [f64; 3]) -> Result<(), String> {
    let f = build_field(1, ts);
    let tol = 1e-12 * scale(ts);
    let sa = f.shift(a);
    let oracle = PeriodicField::from_fn(1, GRID, |idx, y| {
        eval_terms(ts, flat(idx), [y[0] + a[0], y[1] + a[1], y[2] + a[2]])
    })
    .unwrap();
    let d = sa.sub(&oracle).map_err(|e| e.to_string())?.max_abs();
    if d > tol {
        return Err(format!("shift vs translation: {d:e}"));
    }
    let ab = [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
    let d = sa.shift(b).sub(&f.shift(ab)).map_err(|e| e.to_string())?.max_abs();
    if d > tol {
        return Err(format!("composition: {d:e}"));
    }
    let d = (sa.l2_norm() - f.l2_norm()).abs();
    if d > tol {
        return Err(format!("norm change: {d:e}"));
    }
    Ok(())
}

/// Two or three layers with values in [0.5, 4] and widths bounded below.
pub fn laminate() -> impl Strategy<Value = LaminateProfile> {
    prop::collection::vec((0.5..4.0f64, 0.2..1.0f64), 2..=3).prop_map(|layers| {
        let values: Vec<f64> = layers.iter().map(|l| l.0).collect();
        let total: f64 = layers.iter().map(|l| l.1).sum();
        let widths: Vec<f64> = layers.iter().map(|l| l.1 / total).collect();
        LaminateProfile::from_widths(&values, &widths).unwrap()
    })
}

/// Potentials whose curl is the source; the zero wavevector is skipped.
pub fn potentials() -> impl Strategy<Value = Vec<([i64; 3], [(f64, f64); 3])>> {
    prop::collection::vec(
        ([-2i64..=2, -2i64..=2, 0i64..=2], [(-1.0..1.0f64, -1.0..1.0f64), (-1.0..1.0f64, -1.0..1.0f64), (-1.0..1.0f64, -1.0..1.0f64)]),
        1..3,
    )
}

fn canonical(k: [i64; 3]) -> [i64; 3] {
    let neg = k.iter().find(|&&v| v != 0).map_or(false, |&v| v < 0);
    if neg {
        [-k[0], -k[1], -k[2]]
    } else {
        k
    }
}

pub fn source_from(pots: &[([i64; 3], [(f64, f64); 3])]) -> Option<MacroField> {
    let mut seen = Vec::new();
    let mut list = Vec::new();
    for (k, a) in pots {
        let k = canonical(*k);
        if k == [0, 0, 0] || seen.contains(&k) {
            continue;
        }
        seen.push(k);
        list.push((k, a.map(|(re, im)| C64::new(re, im))));
    }
    let f = MacroField::curl_of(1.0, &list).ok()?;
    (f.l2_norm() > 1e-3).then_some(f)
}

/// Every cascade level of a laminate problem is divergence free.
pub fn cascade_divergence_free(profile: &LaminateProfile, pots: &[([i64; 3], [(f64, f64); 3])]) -> Result<(), String> {
    let Some(src) = source_from(pots) else {
        return Ok(());
    };
    let h = laminate_hierarchy(profile, 2).map_err(|e| e.to_string())?;
    let t = HomTensors::from_hierarchy(&h, None).map_err(|e| e.to_string())?;
    let p = TorusProblem::new(1.0, 0.25, src.clone()).map_err(|e| e.to_string())?;
    let c = cascade(&p, &t, 2).map_err(|e| e.to_string())?;
    let qmax = 2.0 * PI * 2.0 * 3f64.sqrt();
    for (l, v) in c.levels.iter().enumerate() {
        let d = v.max_divergence();
        let tol = 1e-12 * qmax * v.l2_norm().max(src.l2_norm());
        if d > tol {
            return Err(format!("level {l}: div {d:e} > {tol:e}"));
        }
    }
    if c.residual > 1e-10 {
        return Err(format!("cascade residual {:e}", c.residual));
    }
    Ok(())
}

/// The two pair-tensor formulas agree after symmetrising each derivative group.
pub fn tilde_formulas_agree(profile: &LaminateProfile) -> Result<(), String> {
    let h = CellHierarchy::build(LayeredMedium::new(profile), 3).map_err(|e| e.to_string())?;
    for s in 0..=2 {
        for j in 0..=s {
            let k = s - j;
            let a = h.tilde_h_direct(j, k).map_err(|e| e.to_string())?;
            let b = h.tilde_h_alternative(j, k).map_err(|e| e.to_string())?;
            let d = symmetrize_groups(&a, j, k).max_abs_diff(&symmetrize_groups(&b, j, k));
            let tol = 1e-10 * a.max_abs().max(1.0);
            if d > tol {
                return Err(format!("({j},{k}): {d:e} > {tol:e}"));
            }
        }
    }
    Ok(())
}
