//! Exact corrector chain for laminates A = alpha(y_2) I with piecewise-constant
//! alpha. Every chain function is a periodic piecewise polynomial, and every
//! ODE is solved in flux form so distributional right-hand sides such as
//! alpha' never appear explicitly.

pub mod pp;

use std::sync::Arc;

use serde::Serialize;

pub use pp::CellFn1D;

use crate::cell::{tf_sym_middle, TensorField};
use crate::cell::layered::LayeredMedium;
use crate::error::{Error, Result};
use crate::field::PeriodicField;
use crate::tensor::{flat_index, ConstTensor};

/// Layered coefficient: value `values[i]` on [breaks[i], breaks[i+1]).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LaminateProfile {
    breaks: Vec<f64>,
    values: Vec<f64>,
}

impl LaminateProfile {
    pub fn new(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breaks.len() < 2 || breaks.len() != values.len() + 1 {
            return Err(Error::InvalidProfile("need one value per layer".into()));
        }
        if breaks[0] != 0.0 || (breaks[breaks.len() - 1] - 1.0).abs() > 1e-14 {
            return Err(Error::InvalidProfile("breakpoints must run from 0 to 1".into()));
        }
        if breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidProfile("breakpoints must increase strictly".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidProfile("layer values must be positive".into()));
        }
        let mut breaks = breaks;
        let last = breaks.len() - 1;
        breaks[last] = 1.0;
        Ok(LaminateProfile { breaks, values })
    }

    /// Layers with the given widths (must sum to 1).
    pub fn from_widths(values: &[f64], widths: &[f64]) -> Result<Self> {
        if values.len() != widths.len() {
            return Err(Error::InvalidProfile("one width per layer".into()));
        }
        if widths.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidProfile("widths must be positive".into()));
        }
        let total: f64 = widths.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidProfile(format!("widths sum to {total}, not 1")));
        }
        let mut breaks = vec![0.0];
        let mut acc = 0.0;
        for w in widths {
            acc += w;
            breaks.push(acc);
        }
        LaminateProfile::new(breaks, values.to_vec())
    }

    /// alpha_1 on [0, l_1), alpha_2 on [l_1, 1).
    pub fn two_layer(alpha1: f64, alpha2: f64, l1: f64) -> Result<Self> {
        if !(l1 > 0.0 && l1 < 1.0) {
            return Err(Error::InvalidProfile(format!("layer width {l1} outside (0, 1)")));
        }
        LaminateProfile::new(vec![0.0, l1, 1.0], vec![alpha1, alpha2])
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn widths(&self) -> Vec<f64> {
        self.breaks.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn layers(&self) -> usize {
        self.values.len()
    }

    pub fn alpha(&self) -> CellFn1D {
        CellFn1D::piecewise_constant(Arc::new(self.breaks.clone()), &self.values)
    }

    /// <alpha>
    pub fn arithmetic_mean(&self) -> f64 {
        self.values.iter().zip(self.widths()).map(|(a, w)| a * w).sum()
    }

    /// <alpha^-1>^-1
    pub fn harmonic_mean(&self) -> f64 {
        1.0 / self.values.iter().zip(self.widths()).map(|(a, w)| w / a).sum::<f64>()
    }

    /// Same profile with alpha replaced by 1/alpha.
    pub fn reciprocal(&self) -> LaminateProfile {
        LaminateProfile { breaks: self.breaks.clone(), values: self.values.iter().map(|v| 1.0 / v).collect() }
    }

    pub fn scaled(&self, lambda: f64) -> Result<LaminateProfile> {
        LaminateProfile::new(self.breaks.clone(), self.values.iter().map(|v| v * lambda).collect())
    }

    /// Value at y_2 (periodic).
    pub fn eval(&self, y2: f64) -> f64 {
        self.alpha().eval(y2)
    }

    /// Smoothed profile: each interface is replaced by a raised-cosine blend
    /// of total width `width` centred on it. Periodic in y_2.
    pub fn smoothed_eval(&self, y2: f64, width: f64) -> f64 {
        let y = y2.rem_euclid(1.0);
        let m = self.values.len();
        let half = 0.5 * width;
        for i in 0..m {
            let t = self.breaks[i];
            let mut d = y - t;
            d -= d.round();
            if d.abs() < half {
                let left = self.values[(i + m - 1) % m];
                let right = self.values[i];
                let s = 0.5 - 0.5 * (std::f64::consts::PI * (d + half) / width).cos();
                return left + (right - left) * s;
            }
        }
        self.eval(y)
    }
}

/// Periodic zero-mean solution of -(alpha u')' = p' + q.
///
/// The flux form takes the derivative part as the function `p` (which may
/// jump at breakpoints) and the regular part `q`, which must have zero mean.
pub fn solve_layer_ode(profile: &LaminateProfile, p: &CellFn1D, q: &CellFn1D) -> Result<CellFn1D> {
    solve_flux(&profile.alpha(), p, q)
}

pub(crate) fn solve_flux(alpha: &CellFn1D, p: &CellFn1D, q: &CellFn1D) -> Result<CellFn1D> {
    let scale = 1.0 + q.max_abs() + p.max_abs();
    let mq = q.mean();
    if mq.abs() > 1e-11 * scale {
        return Err(Error::SolvabilityViolated { what: "layer ODE source mean".into(), residual: mq.abs(), tol: 1e-11 * scale });
    }
    let (qq, _) = q.add_const(-mq).antideriv();
    let ia = alpha.recip_piecewise_constant()?;
    let pq = p.add(&qq);
    let c = pq.mul(&ia).mean() / ia.mean();
    let du = pq.scale(-1.0).add_const(c).mul(&ia);
    let (u, _) = du.antideriv();
    Ok(u.add_const(-u.mean()))
}

/// Periodic zero-mean solution of u'' = g (g must have zero mean).
pub(crate) fn solve_second_antiderivative(g: &CellFn1D) -> Result<CellFn1D> {
    let scale = 1.0 + g.max_abs();
    let mg = g.mean();
    if mg.abs() > 1e-11 * scale {
        return Err(Error::SolvabilityViolated { what: "Poisson source mean".into(), residual: mg.abs(), tol: 1e-11 * scale });
    }
    let (gp, _) = g.add_const(-mg).antideriv();
    let du = gp.add_const(-gp.mean());
    let (u, _) = du.antideriv();
    Ok(u.add_const(-u.mean()))
}

/// Second-order chain: M, L and the constants a, b.
#[derive(Clone, Debug)]
pub struct Order2 {
    pub n: CellFn1D,
    pub m: CellFn1D,
    pub l: CellFn1D,
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Debug)]
pub struct Order3 {
    pub p: CellFn1D,
    pub q: CellFn1D,
    pub r: CellFn1D,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

#[derive(Clone, Debug)]
pub struct Order4 {
    /// N_1 ... N_7.
    pub ns: [CellFn1D; 7],
    /// h_1 ... h_7.
    pub h: [f64; 7],
}

/// -(alpha N')' = alpha'.
pub fn first_order(profile: &LaminateProfile) -> Result<CellFn1D> {
    let al = profile.alpha();
    solve_flux(&al, &al, &zero_like(&al))
}

fn zero_like(f: &CellFn1D) -> CellFn1D {
    CellFn1D::constant(f.breaks().clone(), 0.0)
}

pub fn order2(profile: &LaminateProfile) -> Result<Order2> {
    let al = profile.alpha();
    let z = zero_like(&al);
    let n = solve_flux(&al, &al, &z)?;
    let an = al.mul(&n);
    let m = solve_flux(&al, &an.scale(-1.0), &z)?;
    let l = solve_flux(&al, &z, &al.add_const(-al.mean()))?;
    let a = -al.mul(&l.deriv()).mean();
    let b = an.mean();
    Ok(Order2 { n, m, l, a, b })
}

pub fn order3(profile: &LaminateProfile, o2: &Order2) -> Result<Order3> {
    let al = profile.alpha();
    let z = zero_like(&al);
    let al_l = al.mul(&o2.l);
    let al_dl = al.mul(&o2.l.deriv());
    let al_n = al.mul(&o2.n);
    let p = solve_flux(&al, &al_l, &al_dl.add_const(o2.a))?;
    let q = solve_flux(&al, &al.mul(&o2.m), &z)?;
    let r = solve_flux(&al, &z, &al_n.scale(-1.0).add_const(o2.b))?;
    let c = -al.mul(&p.deriv()).add(&al_l).mean();
    let d = al.mul(&q.deriv()).mean();
    let e = al_l.mean();
    let f = -al.mul(&r.deriv()).mean();
    Ok(Order3 { p, q, r, c, d, e, f })
}

pub fn order4(profile: &LaminateProfile, o2: &Order2, o3: &Order3) -> Result<Order4> {
    let al = profile.alpha();
    let z = zero_like(&al);
    let al_p = al.mul(&o3.p);
    let al_q = al.mul(&o3.q);
    let al_r = al.mul(&o3.r);
    let al_l = al.mul(&o2.l);
    let src_pl = al.mul(&o3.p.deriv()).add(&al_l).add_const(o3.c);
    let src_r = al.mul(&o3.r.deriv()).add_const(o3.f);
    let n1 = solve_flux(&al, &al_p, &src_pl)?;
    let n2 = solve_flux(&al, &z, &al.mul(&o2.m).add_const(o3.d))?;
    let n3 = solve_flux(&al, &z, &al_l.add_const(-o3.e))?;
    let n4 = solve_flux(&al, &al_r, &src_r)?;
    let n5 = solve_flux(&al, &al_q, &z)?;
    let n6 = solve_flux(&al, &z, &src_pl)?;
    let n7 = solve_flux(&al, &z, &src_r)?;
    let h = [
        -al.mul(&n1.deriv()).add(&al_p).mean(),
        -al.mul(&n2.deriv()).mean(),
        -al.mul(&n3.deriv()).mean(),
        al_p.mean(),
        al_q.mean(),
        al_r.mean(),
        -al.mul(&n4.deriv()).add(&al_r).mean(),
    ];
    Ok(Order4 { ns: [n1, n2, n3, n4, n5, n6, n7], h })
}

/// Explicit two-layer formulas for the third-order constants.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ClosedForms {
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

pub fn closed_forms_two_layer(alpha1: f64, alpha2: f64, l1: f64) -> ClosedForms {
    let l2 = 1.0 - l1;
    let beta1 = alpha1 / alpha2;
    let beta2 = 1.0 / beta1;
    let s = l1 / alpha1 + l2 / alpha2;
    let w = l1 * l1 * l2 * l2 / 12.0;
    let c = -w / s * (beta1 - 1.0) * (beta2 - 1.0);
    let e = w * s * (alpha1 - alpha2).powi(2);
    let f = w / (s * s) * (1.0 - beta1) * (1.0 - beta2) * (l1 / alpha2 + l2 / alpha1);
    ClosedForms { c, d: -c, e, f }
}

/// Corrector fields and coefficient tensors assembled from the chain.
#[derive(Clone, Debug)]
pub struct LaminateTensors {
    pub profile: LaminateProfile,
    /// hat h^(2) ... hat h^(J+1).
    pub hat_h: Vec<ConstTensor>,
    /// N^(1) ... N^(J) as functions of y_2.
    pub correctors: Vec<TensorField<CellFn1D>>,
}

impl LaminateTensors {
    pub fn levels(&self) -> usize {
        self.correctors.len()
    }

    /// hat h^(r), r >= 2.
    pub fn hat_h(&self, r: usize) -> Result<&ConstTensor> {
        if r < 2 {
            return Err(Error::MissingLevel(r));
        }
        self.hat_h.get(r - 2).ok_or(Error::MissingLevel(r - 1))
    }

    /// N^(j) sampled on an n^3 grid.
    pub fn extruded_corrector(&self, j: usize, n: usize) -> Result<PeriodicField> {
        if j == 0 || j > self.levels() {
            return Err(Error::MissingLevel(j));
        }
        extrude(&self.correctors[j - 1], n)
    }

    /// N^(j) symmetrised over its derivative indices.
    pub fn corrector_symmetrised(&self, j: usize) -> Result<TensorField<CellFn1D>> {
        if j == 0 || j > self.levels() {
            return Err(Error::MissingLevel(j));
        }
        let med = LayeredMedium::new(&self.profile);
        Ok(tf_sym_middle(&med, &self.correctors[j - 1]))
    }
}

/// Sample a y_2-dependent tensor field on the n^3 grid.
pub fn extrude(field: &TensorField<CellFn1D>, n: usize) -> Result<PeriodicField> {
    let h = 1.0 / n as f64;
    let cols: Vec<Vec<f64>> = field.comps.iter().map(|f| (0..n).map(|i| f.eval(i as f64 * h)).collect()).collect();
    PeriodicField::from_fn(field.order, n, |idx, y| {
        let k = (y[1] * n as f64).round() as usize % n;
        cols[flat_index(idx)][k]
    })
}

type Pattern<'a> = Vec<(Vec<&'a str>, &'a CellFn1D, f64)>;

fn pattern_field(order: usize, zero: &CellFn1D, pat: &Pattern<'_>) -> TensorField<CellFn1D> {
    let mut t = TensorField::from_fn(order, |_| zero.clone());
    for (keys, f, sign) in pat {
        for key in keys {
            let idx: Vec<usize> = key.bytes().map(|b| (b - b'1') as usize).collect();
            t.comps[flat_index(&idx)] = f.scale(*sign);
        }
    }
    t
}

/// Correctors N^(1..J) and hat h^(2..J+1) from the closed-form tables.
/// J is the number of corrector levels; the tables stop at hat h^(5).
pub fn assemble_hierarchy(profile: &LaminateProfile, levels: usize) -> Result<LaminateTensors> {
    if levels == 0 || levels > 4 {
        return Err(Error::LevelUnsupported { requested: levels, max: 4 });
    }
    let o2 = order2(profile)?;
    let zero = zero_like(&o2.n);
    let harm = profile.harmonic_mean();
    let mean = profile.arithmetic_mean();
    let mut hat_h = vec![ConstTensor::from_pattern(2, &[(&["11", "33"], harm), (&["22"], mean)])?];
    let mut correctors = vec![pattern_field(2, &zero, &vec![(vec!["13"], &o2.n, -1.0), (vec!["31"], &o2.n, 1.0)])];
    if levels >= 2 {
        hat_h.push(ConstTensor::from_pattern(3, &[(&["112", "332"], o2.a), (&["211", "233"], -o2.b)])?);
        correctors.push(pattern_field(
            3,
            &zero,
            &vec![
                (vec!["123"], &o2.m, 1.0),
                (vec!["321"], &o2.m, -1.0),
                (vec!["132"], &o2.l, 1.0),
                (vec!["312"], &o2.l, -1.0),
            ],
        ));
    }
    let o3 = if levels >= 3 { Some(order3(profile, &o2)?) } else { None };
    if let Some(o3) = &o3 {
        hat_h.push(ConstTensor::from_pattern(
            4,
            &[
                (&["1212", "3232"], o3.c),
                (&["2121", "2323"], -o3.d),
                (&["2112", "2332"], o3.e),
                (&["1111", "1133", "3311", "3333"], o3.f),
            ],
        )?);
        correctors.push(pattern_field(
            4,
            &zero,
            &vec![
                (vec!["1232"], &o3.p, 1.0),
                (vec!["3212"], &o3.p, -1.0),
                (vec!["1223"], &o3.q, 1.0),
                (vec!["3221"], &o3.q, -1.0),
                (vec!["1311", "1333"], &o3.r, 1.0),
                (vec!["3111", "3133"], &o3.r, -1.0),
            ],
        ));
    }
    if levels >= 4 {
        let o3 = o3.as_ref().expect("order 3 computed");
        let o4 = order4(profile, &o2, o3)?;
        let [n1, n2, n3, n4, n5, n6, n7] = &o4.ns;
        let h = o4.h;
        hat_h.push(ConstTensor::from_pattern(
            5,
            &[
                (&["12212", "32232"], h[0]),
                (&["11121", "11323", "33121", "33323"], h[1]),
                (&["11112", "11332", "33112", "33332"], h[2]),
                (&["21212", "23232"], h[3]),
                (&["21221", "23223"], h[4]),
                (&["21111", "21133", "23311", "23333"], h[5]),
                (&["12111", "12133", "32311", "32333"], h[6]),
            ],
        )?);
        correctors.push(pattern_field(
            5,
            &zero,
            &vec![
                (vec!["12232"], n1, 1.0),
                (vec!["32212"], n1, -1.0),
                (vec!["13121", "13323"], n2, 1.0),
                (vec!["31121", "31323"], n2, -1.0),
                (vec!["13332", "13112"], n3, 1.0),
                (vec!["31332", "31112"], n3, -1.0),
                (vec!["12311", "12333"], n4, 1.0),
                (vec!["32111", "32133"], n4, -1.0),
                (vec!["12223"], n5, 1.0),
                (vec!["32221"], n5, -1.0),
                (vec!["23212"], n6, 1.0),
                (vec!["21232"], n6, -1.0),
                (vec!["23111", "23133"], n7, 1.0),
                (vec!["21311", "21333"], n7, -1.0),
            ],
        ));
    }
    Ok(LaminateTensors { profile: profile.clone(), hat_h, correctors })
}

/// Everything the laminate report needs.
#[derive(Clone, Debug, Serialize)]
pub struct LaminateReport {
    pub profile: LaminateProfile,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
    pub h: [f64; 7],
    pub closed_forms: Option<ClosedForms>,
    pub hat_h: Vec<ConstTensor>,
    pub checks: LaminateChecks,
}

#[derive(Clone, Debug, Serialize)]
pub struct LaminateChecks {
    pub a_b_vanish: bool,
    pub c_equals_minus_d: bool,
    pub closed_form_match: bool,
    pub h1_minus_h5: bool,
    pub h2_minus_h7: bool,
    pub h3_minus_h6: bool,
    pub h4_nonzero: bool,
}

/// Round-off floor for quantities that vanish identically: a few ulps of
/// the largest layer value.
pub fn roundoff(profile: &LaminateProfile) -> f64 {
    8.0 * f64::EPSILON * profile.values().iter().cloned().fold(1.0, f64::max)
}

/// Run the whole chain and evaluate the two-layer identities at tolerance `tol`.
pub fn laminate_report(profile: &LaminateProfile, tol: f64) -> Result<LaminateReport> {
    let o2 = order2(profile)?;
    let o3 = order3(profile, &o2)?;
    let o4 = order4(profile, &o2, &o3)?;
    let tensors = assemble_hierarchy(profile, 4)?;
    let closed = (profile.layers() == 2)
        .then(|| closed_forms_two_layer(profile.values()[0], profile.values()[1], profile.breaks()[1]));
    let h = o4.h;
    let checks = LaminateChecks {
        a_b_vanish: o2.a.abs().max(o2.b.abs()) <= roundoff(profile),
        c_equals_minus_d: (o3.c + o3.d).abs() < tol,
        closed_form_match: closed.map_or(false, |cf| {
            (cf.c - o3.c).abs() < tol && (cf.d - o3.d).abs() < tol && (cf.e - o3.e).abs() < tol && (cf.f - o3.f).abs() < tol
        }),
        h1_minus_h5: (h[0] + h[4]).abs() < tol,
        h2_minus_h7: (h[1] + h[6]).abs() < tol,
        h3_minus_h6: (h[2] + h[5]).abs() < tol,
        h4_nonzero: h[3].abs() > tol,
    };
    Ok(LaminateReport {
        profile: profile.clone(),
        a: o2.a,
        b: o2.b,
        c: o3.c,
        d: o3.d,
        e: o3.e,
        f: o3.f,
        h,
        closed_forms: closed,
        hat_h: tensors.hat_h,
        checks,
    })
}
