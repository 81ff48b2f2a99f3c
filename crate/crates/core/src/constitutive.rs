//! Quasistatic electromagnetics on stratified media and the higher-order
//! constitutive laws relating averaged fields to averaged fluxes.
//!
//! The low-frequency fields solve
//!   curl(mu^-1 curl E_1) = -J_0,
//!   curl(eps^-1 curl H_1) = curl(eps^-1 J_1),
//! and the leading-order fields follow as B_0 = -curl E_1, H_0 = mu^-1 B_0,
//! D_0 = curl H_1 - J_1, E_0 = eps^-1 D_0.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fine::{eval_terms, laminate_direct_solve, laminate_flux_solve, LaminateFine, LaminateOptions, Stratified};
use crate::homogenised::{c0, el_middle, mode_operator, solve_perp, HomTensors, MacroField, TorusProblem, C3};
use crate::tensor::{bar_shuffle, ConstTensor};

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Largest wave number accepted by the constitutive operators. The
/// derivative towers amplify high modes and the series is only asymptotic.
pub const LAW_BAND_CAP: i64 = 16;

fn check_band(f: &MacroField) -> Result<()> {
    for (k, _) in &f.modes {
        if k.iter().any(|v| v.abs() > LAW_BAND_CAP) {
            return Err(Error::InvalidProblem(format!("mode {k:?} exceeds the band cap {LAW_BAND_CAP}")));
        }
    }
    Ok(())
}

fn apply_series(f: &MacroField, terms: &[(f64, &ConstTensor)]) -> Result<MacroField> {
    check_band(f)?;
    Ok(f.map(|_, q, c| {
        let mut out = [c0(); 3];
        for (w, t) in terms {
            let n = t.order() - 2;
            let s = t.contract_middle(q);
            let ph = I.powu(n as u32) * *w;
            for a in 0..3 {
                for b in 0..3 {
                    out[a] += ph * s[a][b] * c[b];
                }
            }
        }
        out
    }))
}

/// H = sum_{j<=order} eps^j hat h^(j+2) grad^j B, mode by mode.
pub fn effective_permeability_apply(hat_h: &[ConstTensor], b: &MacroField, eps: f64, order: usize) -> Result<MacroField> {
    if hat_h.len() <= order {
        return Err(Error::LevelUnsupported { requested: order + 2, max: hat_h.len() + 1 });
    }
    let terms: Vec<(f64, &ConstTensor)> = (0..=order).map(|j| (eps.powi(j as i32), &hat_h[j])).collect();
    apply_series(b, &terms)
}

/// sum_n eps^n sum_{j+k=n} (-1)^k bar h^(j,k) grad^n B.
pub fn variational_h_field(
    tilde: &BTreeMap<(usize, usize), ConstTensor>,
    b: &MacroField,
    eps: f64,
    nmax: usize,
) -> Result<MacroField> {
    let mut bars = Vec::new();
    for n in 0..=nmax {
        for j in 0..=n {
            let k = n - j;
            let h = tilde.get(&(j, k)).ok_or(Error::MissingPair { j, k })?;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            bars.push((sign * eps.powi(n as i32), bar_shuffle(h, j, k)?));
        }
    }
    let terms: Vec<(f64, &ConstTensor)> = bars.iter().map(|(w, t)| (*w, t)).collect();
    apply_series(b, &terms)
}

/// The electric pair (E, variational E) from the magnetic-hierarchy tensors.
pub fn electric_law_apply(
    k_hat: &[ConstTensor],
    k_tilde: &BTreeMap<(usize, usize), ConstTensor>,
    d: &MacroField,
    eps: f64,
    order: usize,
) -> Result<(MacroField, MacroField)> {
    Ok((effective_permeability_apply(k_hat, d, eps, order)?, variational_h_field(k_tilde, d, eps, order)?))
}

/// Cascade and truncations of the homogenised magnetic-field equation with
/// a current source.
#[derive(Clone, Debug, Serialize)]
pub struct MagneticSolution {
    pub cascade: Vec<MacroField>,
    pub cascade_residual: f64,
    /// Truncated asymptotic equation of order K.
    pub truncated: MacroField,
    /// Minimiser of the truncated functional (present when k tilde tensors are).
    pub variational: Option<MacroField>,
}

fn cross_c(q: [f64; 3]) -> Matrix3<C64> {
    Matrix3::new(0.0, -q[2], q[1], q[2], 0.0, -q[0], -q[1], q[0], 0.0).map(|v| C64::new(v, 0.0))
}

fn to_v(c: C3) -> Vector3<C64> {
    Vector3::new(c[0], c[1], c[2])
}

/// Per-mode source term curl(k^(l+2) grad^l J).
fn source_term(t: &ConstTensor, q: [f64; 3], j: C3) -> Vector3<C64> {
    let l = t.order() - 2;
    let s = Matrix3::from_fn(|a, b| C64::new(t.contract_middle(q)[a][b], 0.0));
    cross_c(q) * s * to_v(j) * I.powu(l as u32 + 1)
}

pub fn magnetic_homogenised_solve(k: &HomTensors, j1: &MacroField, eps: f64, kmax: usize) -> Result<MagneticSolution> {
    if j1.max_divergence() > 1e-12 * j1.l2_norm().max(1.0) {
        return Err(Error::InvalidProblem("current J_1 is not divergence-free".into()));
    }
    for r in 2..=kmax + 2 {
        k.hat(r)?;
    }
    let nm = j1.modes.len();
    let mut levels: Vec<Vec<C3>> = Vec::new();
    let mut residual: f64 = 0.0;
    for l in 0..=kmax {
        let mut lv = Vec::with_capacity(nm);
        for (mi, (kk, jj)) in j1.modes.iter().enumerate() {
            let q = j1.q(*kk);
            let mut rhs = source_term(k.hat(l + 2)?, q, *jj);
            let target = rhs;
            for j in 1..=l {
                rhs -= mode_operator(k.hat(j + 2)?, q) * to_v(levels[l - j][mi]);
            }
            let p0 = mode_operator(k.hat(2)?, q);
            let (w, _) = solve_perp(&p0, [rhs[0], rhs[1], rhs[2]], q)?;
            let mut check = p0 * to_v(w);
            for j in 1..=l {
                check += mode_operator(k.hat(j + 2)?, q) * to_v(levels[l - j][mi]);
            }
            let scale = source_term(k.hat(2)?, q, *jj).norm().max(1e-300);
            residual = residual.max((check - target).norm() / scale);
            lv.push(w);
        }
        levels.push(lv);
    }
    let keys: Vec<[i64; 3]> = j1.modes.iter().map(|(k, _)| *k).collect();
    let cascade = levels
        .into_iter()
        .map(|lv| MacroField::new(j1.period, keys.iter().copied().zip(lv).collect()))
        .collect::<Result<Vec<_>>>()?;
    let mut trunc = Vec::with_capacity(nm);
    for (kk, jj) in &j1.modes {
        let q = j1.q(*kk);
        let mut p = Matrix3::zeros();
        let mut rhs = Vector3::zeros();
        for j in 0..=kmax {
            let w = C64::new(eps.powi(j as i32), 0.0);
            p += mode_operator(k.hat(j + 2)?, q) * w;
            rhs += source_term(k.hat(j + 2)?, q, *jj) * w;
        }
        trunc.push((*kk, solve_perp(&p, [rhs[0], rhs[1], rhs[2]], q)?.0));
    }
    let variational = if k.tilde.is_empty() {
        None
    } else {
        let mut v = Vec::with_capacity(nm);
        for (kk, jj) in &j1.modes {
            let q = j1.q(*kk);
            let b = el_middle(k, kmax, eps, q)?;
            let c = cross_c(q) * I;
            let rhs = c * b * to_v(*jj);
            v.push((*kk, solve_perp(&(c * b * c), [rhs[0], rhs[1], rhs[2]], q)?.0));
        }
        Some(MacroField::new(j1.period, v)?)
    };
    Ok(MagneticSolution { cascade, cascade_residual: residual, truncated: MacroField::new(j1.period, trunc)?, variational })
}

/// Low-frequency fields on a stratified medium.
#[derive(Clone, Debug)]
pub struct QuasistaticFields {
    pub mu: Stratified,
    pub permittivity: Stratified,
    pub j0: MacroField,
    pub j1: MacroField,
    pub e1: LaminateFine,
    pub h1: LaminateFine,
}

/// Solves the two low-frequency problems for the given currents.
pub fn quasistatic_reduce(
    j0: &MacroField,
    j1: &MacroField,
    mu: &Stratified,
    permittivity: &Stratified,
    eps: f64,
    opts: &LaminateOptions,
) -> Result<QuasistaticFields> {
    let pe = TorusProblem::new(j0.period, eps, j0.scale(-1.0))?;
    let ph = TorusProblem::new(j1.period, eps, j1.clone())?;
    let e1 = laminate_direct_solve(&pe, &mu.reciprocal(), 0.0, opts)?;
    let einv = permittivity.reciprocal();
    let h1 = laminate_flux_solve(&ph, &einv, &einv, 0.0, opts)?;
    Ok(QuasistaticFields { mu: mu.clone(), permittivity: permittivity.clone(), j0: j0.clone(), j1: j1.clone(), e1, h1 })
}

#[derive(Clone, Debug, Serialize)]
pub struct QuasistaticEnergy {
    /// int mu^-1 curl E_1 . curl E_1
    pub curl_form: f64,
    /// int B_0 . H_0
    pub b0_h0: f64,
    /// -int J_0 . E_1
    pub source_work: f64,
    /// Largest relative deviation among the three magnetic evaluations
    pub second_relation_deviation: f64,
    /// ||curl E_0||_{H^-1} / ||J_1||; zero up to discretisation. D_0 itself
    /// vanishes whenever J_1 is divergence-free.
    pub first_relation_residual: f64,
    pub magnetic_energy: f64,
    /// 1/2 int D_0 . E_0
    pub electric_energy: f64,
    /// 1/2 int eps^-1 (curl H_1 - J_1) . (-J_1), the same energy via the H_1 equation
    pub electric_energy_alt: f64,
}

fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

/// Energies of the low-frequency fields in their alternative forms.
pub fn energy_quasistatic(fields: &QuasistaticFields) -> QuasistaticEnergy {
    let e1 = &fields.e1;
    let (t, eps) = (e1.period, e1.eps);
    let mu_inv = |x: f64| 1.0 / fields.mu.eval((x / eps).rem_euclid(1.0));
    let (mut curl_form, mut b0h0, mut work) = (0.0, 0.0, 0.0);
    e1.for_each_group(|q1, q3, w, sol| {
        let src = e1.group_source(q1, q3);
        for e in 0..e1.mesh.elements() {
            let ev = sol.element_values(&e1.mesh, e);
            let cu = ev.curl(q1, q3);
            for i in 0..ev.x.len() {
                let m = mu_inv(ev.x[i]);
                let b0 = cu[i].map(|v| -v);
                let h0 = b0.map(|v| v * m);
                let f = eval_terms(&src, ev.x[i]);
                let ww = w * t * t * ev.w[i];
                curl_form += ww * m * cu[i].iter().map(|v| v.norm_sqr()).sum::<f64>();
                b0h0 += ww * (0..3).map(|a| (b0[a] * h0[a].conj()).re).sum::<f64>();
                // the E_1 problem has source -J_0 = f
                work += ww * (0..3).map(|a| (f[a] * ev.u[i][a].conj()).re).sum::<f64>();
            }
        }
    });
    let h1 = &fields.h1;
    let e_inv = |x: f64| 1.0 / fields.permittivity.eval((x / eps).rem_euclid(1.0));
    let cutoff = (40.0 * t / eps).ceil() as i64;
    let (mut de, mut de_alt, mut curl_e0, mut e0_norm) = (0.0, 0.0, 0.0, 0.0);
    h1.for_each_group(|q1, q3, w, sol| {
        let src = h1.group_source(q1, q3);
        let mut coef = vec![[c0(); 3]; 2 * cutoff as usize + 1];
        for e in 0..h1.mesh.elements() {
            let ev = sol.element_values(&h1.mesh, e);
            let cu = ev.curl(q1, q3);
            for i in 0..ev.x.len() {
                let x = ev.x[i];
                let j = eval_terms(&src, x);
                let a = e_inv(x);
                let d0: C3 = [0, 1, 2].map(|c| cu[i][c] - j[c]);
                let e0 = d0.map(|v| v * a);
                let ww = w * t * t * ev.w[i];
                de += 0.5 * ww * (0..3).map(|c| (d0[c] * e0[c].conj()).re).sum::<f64>();
                de_alt -= 0.5 * ww * (0..3).map(|c| (e0[c] * j[c].conj()).re).sum::<f64>();
                e0_norm += ww * e0.iter().map(|v| v.norm_sqr()).sum::<f64>();
                let step = C64::from_polar(1.0, -2.0 * PI * x / t);
                let mut ph = C64::from_polar(ev.w[i] / t, 2.0 * PI * cutoff as f64 * x / t);
                for cm in coef.iter_mut() {
                    for c in 0..3 {
                        cm[c] += e0[c] * ph;
                    }
                    ph *= step;
                }
            }
        }
        for (m, c) in coef.iter().enumerate() {
            let k = [q1, 2.0 * PI * (m as i64 - cutoff) as f64 / t, q3];
            let cr = [k[1] * c[2] - k[2] * c[1], k[2] * c[0] - k[0] * c[2], k[0] * c[1] - k[1] * c[0]];
            let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            curl_e0 += w * t.powi(3) * cr.iter().map(|v| v.norm_sqr()).sum::<f64>() / (1.0 + k2);
        }
    });
    let j1n = fields.j1.l2_norm();
    QuasistaticEnergy {
        curl_form,
        b0_h0: b0h0,
        source_work: work,
        second_relation_deviation: rel(curl_form, b0h0).max(rel(curl_form, work)),
        first_relation_residual: if j1n > 0.0 { curl_e0.sqrt() / j1n } else { e0_norm.sqrt() },
        magnetic_energy: 0.5 * b0h0,
        electric_energy: de,
        electric_energy_alt: de_alt,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laminate::LaminateProfile;

    fn currents() -> (MacroField, MacroField) {
        let c = |v: f64| C64::new(v, 0.0);
        (
            MacroField::curl_of(1.0, &[([1, 1, 2], [c(0.3), c(-0.2), c(0.5)])]).unwrap(),
            MacroField::curl_of(1.0, &[([0, 1, 1], [c(0.1), c(0.4), c(0.0)]), ([2, -1, 0], [c(0.0), c(0.0), c(0.2)])]).unwrap(),
        )
    }

    #[test]
    fn zero_currents_give_zero_energies() {
        let z = MacroField::zero(1.0);
        let l = Stratified::Layers(LaminateProfile::two_layer(1.0, 2.0, 0.5).unwrap());
        let f = quasistatic_reduce(&z, &z, &l, &l, 0.25, &LaminateOptions::default()).unwrap();
        let e = energy_quasistatic(&f);
        assert_eq!(e.curl_form, 0.0);
        assert_eq!(e.electric_energy, 0.0);
    }

    #[test]
    fn identity_media_reduce_to_constant_problems() {
        let (j0, j1) = currents();
        let one = Stratified::Layers(LaminateProfile::two_layer(1.0, 1.0, 0.5).unwrap());
        let f = quasistatic_reduce(&j0, &j1, &one, &one, 0.25, &LaminateOptions::default()).unwrap();
        // E_1 = -J_0 / |q|^2 mode by mode
        let (k, c) = j0.modes[0];
        let q = j0.q(k);
        let q2: f64 = q.iter().map(|v| v * v).sum();
        let u = f.e1.amplitude(k);
        for i in 0..3 {
            assert!((u[i] + c[i] / q2).norm() < 1e-12);
        }
        // curl H_1 = J_1 so D_0 = 0
        let e = energy_quasistatic(&f);
        assert!(e.electric_energy.abs() < 1e-20, "{}", e.electric_energy);
        assert!(e.second_relation_deviation < 1e-12);
    }

    #[test]
    fn zero_order_law_is_matrix_product() {
        let h = vec![ConstTensor::identity().scale(2.0)];
        let (b, _) = currents();
        let out = effective_permeability_apply(&h, &b, 0.1, 0).unwrap();
        assert_eq!(out, b.scale(2.0));
        assert!(effective_permeability_apply(&h, &b, 0.1, 1).is_err());
    }

    #[test]
    fn band_cap_is_enforced() {
        let f = MacroField::new(1.0, vec![([17, 0, 0], [c0(), C64::new(1.0, 0.0), c0()])]).unwrap();
        assert!(effective_permeability_apply(&[ConstTensor::identity()], &f, 0.1, 0).is_err());
    }
}
