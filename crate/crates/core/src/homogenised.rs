//! Constant-coefficient homogenised problems on the torus [0, T]^3.
//!
//! Macroscopic fields are real and band-limited:
//! v(x) = sum_k 2 Re(v_k exp(i q_k . x)), q_k = 2 pi k / T, over a half set of
//! modes (k and -k are never both stored). Every per-mode operator acts on
//! the plane orthogonal to q_k, which is where divergence-free amplitudes
//! live.

use std::collections::BTreeMap;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::cell::{CellHierarchy, CellMedium};
use crate::error::{Error, Result};
use crate::tensor::{multi_indices, ConstTensor};

pub type C3 = [C64; 3];

const I: C64 = C64 { re: 0.0, im: 1.0 };

pub(crate) fn c0() -> C64 {
    C64::new(0.0, 0.0)
}

pub fn wavevector(period: f64, k: [i64; 3]) -> [f64; 3] {
    k.map(|v| 2.0 * std::f64::consts::PI * v as f64 / period)
}

fn to_v(c: C3) -> Vector3<C64> {
    Vector3::new(c[0], c[1], c[2])
}

fn from_v(v: &Vector3<C64>) -> C3 {
    [v[0], v[1], v[2]]
}

/// i q x c
pub fn curl_amplitude(q: [f64; 3], c: C3) -> C3 {
    [
        I * (q[1] * c[2] - q[2] * c[1]),
        I * (q[2] * c[0] - q[0] * c[2]),
        I * (q[0] * c[1] - q[1] * c[0]),
    ]
}

/// Real band-limited vector field on the torus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroField {
    pub period: f64,
    pub modes: Vec<([i64; 3], C3)>,
}

impl MacroField {
    pub fn new(period: f64, modes: Vec<([i64; 3], C3)>) -> Result<Self> {
        if !(period > 0.0) {
            return Err(Error::InvalidProblem(format!("period {period} must be positive")));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (k, c) in &modes {
            if *k == [0, 0, 0] {
                return Err(Error::InvalidProblem("the zero mode is excluded (fields have zero mean)".into()));
            }
            if c.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::InvalidProblem(format!("non-finite amplitude for mode {k:?}")));
            }
            let neg = k.map(|v| -v);
            if !seen.insert(*k) || seen.contains(&neg) {
                return Err(Error::InvalidProblem(format!("mode {k:?} listed twice (possibly as its conjugate)")));
            }
        }
        Ok(MacroField { period, modes })
    }

    pub fn zero(period: f64) -> Self {
        MacroField { period, modes: Vec::new() }
    }

    /// Field whose amplitudes are curl of the given potentials, so the result
    /// is exactly divergence-free.
    pub fn curl_of(period: f64, potentials: &[([i64; 3], C3)]) -> Result<Self> {
        let modes = potentials.iter().map(|(k, a)| (*k, curl_amplitude(wavevector(period, *k), *a))).collect();
        MacroField::new(period, modes)
    }

    pub fn q(&self, k: [i64; 3]) -> [f64; 3] {
        wavevector(self.period, k)
    }

    /// Same modes, amplitudes mapped per mode.
    pub fn map(&self, mut f: impl FnMut([i64; 3], [f64; 3], C3) -> C3) -> MacroField {
        MacroField {
            period: self.period,
            modes: self.modes.iter().map(|(k, c)| (*k, f(*k, self.q(*k), *c))).collect(),
        }
    }

    pub fn curl(&self) -> MacroField {
        self.map(|_, q, c| curl_amplitude(q, c))
    }

    pub fn scale(&self, s: f64) -> MacroField {
        self.map(|_, _, c| c.map(|v| v * s))
    }

    /// self + s * other (same mode list).
    pub fn axpy(&self, s: f64, other: &MacroField) -> Result<MacroField> {
        if self.modes.len() != other.modes.len() || self.modes.iter().zip(&other.modes).any(|(a, b)| a.0 != b.0) {
            return Err(Error::InvalidProblem("fields carry different mode sets".into()));
        }
        Ok(MacroField {
            period: self.period,
            modes: self
                .modes
                .iter()
                .zip(&other.modes)
                .map(|((k, a), (_, b))| (*k, [0, 1, 2].map(|i| a[i] + b[i] * s)))
                .collect(),
        })
    }

    pub fn volume(&self) -> f64 {
        self.period.powi(3)
    }

    /// L^2 norm of the real field.
    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.modes.iter().map(|(_, c)| c.iter().map(|v| v.norm_sqr()).sum::<f64>()).sum();
        (2.0 * self.volume() * s).sqrt()
    }

    /// int_T self . other for two real fields on the same mode set.
    pub fn inner(&self, other: &MacroField) -> f64 {
        let mut s = 0.0;
        for (k, a) in &self.modes {
            if let Some((_, b)) = other.modes.iter().find(|(kk, _)| kk == k) {
                s += (0..3).map(|i| (a[i].conj() * b[i]).re).sum::<f64>();
            }
        }
        2.0 * self.volume() * s
    }

    /// max_k |q . c_k|
    pub fn max_divergence(&self) -> f64 {
        self.modes
            .iter()
            .map(|(k, c)| {
                let q = self.q(*k);
                (q[0] * c[0] + q[1] * c[1] + q[2] * c[2]).norm()
            })
            .fold(0.0, f64::max)
    }

    /// Point value.
    pub fn eval(&self, x: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (k, c) in &self.modes {
            let q = self.q(*k);
            let ph = C64::from_polar(1.0, q[0] * x[0] + q[1] * x[1] + q[2] * x[2]);
            for i in 0..3 {
                out[i] += 2.0 * (c[i] * ph).re;
            }
        }
        out
    }

    pub fn amplitude(&self, k: [i64; 3]) -> Option<C3> {
        self.modes.iter().find(|(kk, _)| *kk == k).map(|(_, c)| *c)
    }
}

/// Source and scales of one homogenisation problem.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TorusProblem {
    pub period: f64,
    pub eps: f64,
    pub source: MacroField,
}

impl TorusProblem {
    pub fn new(period: f64, eps: f64, source: MacroField) -> Result<Self> {
        if !(period > 0.0 && eps > 0.0) {
            return Err(Error::InvalidProblem("period and eps must be positive".into()));
        }
        let ratio = period / eps;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio.round() < 1.0 {
            return Err(Error::InvalidProblem(format!("T/eps = {ratio} is not a positive integer")));
        }
        if (source.period - period).abs() > 1e-14 * period {
            return Err(Error::InvalidProblem("source period differs from the torus period".into()));
        }
        let scale = source.modes.iter().map(|(k, c)| {
            let q = source.q(*k);
            (q.iter().map(|v| v * v).sum::<f64>() * c.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
        });
        for ((k, c), s) in source.modes.iter().zip(scale) {
            let q = source.q(*k);
            let d = (q[0] * c[0] + q[1] * c[1] + q[2] * c[2]).norm();
            if d > 1e-12 * s.max(1e-300) && d > 0.0 {
                return Err(Error::InvalidProblem(format!("source mode {k:?} is not divergence-free")));
            }
        }
        Ok(TorusProblem { period, eps, source })
    }

    /// Periods of the microstructure per torus side.
    pub fn cells(&self) -> usize {
        (self.period / self.eps).round() as usize
    }

    pub fn with_eps(&self, eps: f64) -> Result<TorusProblem> {
        TorusProblem::new(self.period, eps, self.source.clone())
    }
}

/// Constant tensors needed by the macroscopic solvers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HomTensors {
    /// hat h^(2), hat h^(3), ...
    pub hat_h: Vec<ConstTensor>,
    /// h~^(j,k) keyed by (j, k).
    pub tilde: BTreeMap<(usize, usize), ConstTensor>,
}

impl HomTensors {
    /// hat h tensors of every computed level and h~^(j,k) for j, k <= `tilde_max`.
    pub fn from_hierarchy<M: CellMedium>(h: &CellHierarchy<M>, tilde_max: Option<usize>) -> Result<Self> {
        let tilde = match tilde_max {
            Some(k) => h.tilde_square(k)?,
            None => BTreeMap::new(),
        };
        Ok(HomTensors { hat_h: h.hat_h_list(), tilde })
    }

    pub fn hat(&self, r: usize) -> Result<&ConstTensor> {
        if r < 2 {
            return Err(Error::MissingLevel(r));
        }
        self.hat_h.get(r - 2).ok_or(Error::LevelUnsupported { requested: r, max: self.hat_h.len() + 1 })
    }

    pub fn tilde(&self, j: usize, k: usize) -> Result<&ConstTensor> {
        self.tilde.get(&(j, k)).ok_or(Error::MissingPair { j, k })
    }
}

fn cross_c(q: [f64; 3]) -> Matrix3<C64> {
    Matrix3::new(0.0, -q[2], q[1], q[2], 0.0, -q[0], -q[1], q[0], 0.0).map(|v| C64::new(v, 0.0))
}

fn mat_c(m: [[f64; 3]; 3]) -> Matrix3<C64> {
    Matrix3::from_fn(|i, j| C64::new(m[i][j], 0.0))
}

/// Per-mode symbol of curl(hat h^(j+2) grad^j curl .): i^(j+2) [q]x S_j(q) [q]x.
pub fn mode_operator(h: &ConstTensor, q: [f64; 3]) -> Matrix3<C64> {
    let j = h.order() - 2;
    let s = mat_c(h.contract_middle(q));
    let c = cross_c(q);
    c * s * c * I.powu(j as u32 + 2)
}

/// The per-mode operator of the variational truncation of order K.
pub fn el_operator(t: &HomTensors, kmax: usize, eps: f64, q: [f64; 3]) -> Result<Matrix3<C64>> {
    let b = el_middle(t, kmax, eps, q)?;
    let c = cross_c(q);
    Ok(-(c * b * c))
}

/// B = sum_{j,k<=K} eps^(j+k) i^(k-j) G_jk(q), Hermitian.
pub fn el_middle(t: &HomTensors, kmax: usize, eps: f64, q: [f64; 3]) -> Result<Matrix3<C64>> {
    let mut b = Matrix3::<C64>::zeros();
    for j in 0..=kmax {
        for k in 0..=kmax {
            let g = mat_c(t.tilde(j, k)?.contract_groups(j, q));
            let ph = I.powi(k as i32 - j as i32) * eps.powi((j + k) as i32);
            b += g * ph;
        }
    }
    Ok(b)
}

/// Orthonormal basis of the plane orthogonal to q.
pub fn perp_basis(q: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
    let qn = q.map(|v| v / n);
    let a = if qn[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let cr = |u: [f64; 3], v: [f64; 3]| [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    let e1 = cr(qn, a);
    let l = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    let e1 = e1.map(|v| v / l);
    (e1, cr(qn, e1))
}

/// Restriction of a per-mode operator to the plane orthogonal to q.
fn restrict(p: &Matrix3<C64>, q: [f64; 3]) -> (Matrix2<C64>, [Vector3<C64>; 2]) {
    let (e1, e2) = perp_basis(q);
    let b = [to_v(e1.map(|v| C64::new(v, 0.0))), to_v(e2.map(|v| C64::new(v, 0.0)))];
    let m = Matrix2::from_fn(|i, j| b[i].dotc(&(p * b[j])));
    (m, b)
}

/// Condition number of a 2x2 complex matrix (ratio of singular values).
fn cond2(m: &Matrix2<C64>) -> f64 {
    let sv = m.singular_values();
    if sv.min() == 0.0 {
        f64::INFINITY
    } else {
        sv.max() / sv.min()
    }
}

/// Solve P v = rhs for v orthogonal to q. Returns v and the condition number.
pub fn solve_perp(p: &Matrix3<C64>, rhs: C3, q: [f64; 3]) -> Result<(C3, f64)> {
    let (m, b) = restrict(p, q);
    let r = to_v(rhs);
    let rr = Vector2::new(b[0].dotc(&r), b[1].dotc(&r));
    let cond = cond2(&m);
    let sol = m.lu().solve(&rr).ok_or_else(|| Error::Singular(format!("mode operator at q = {q:?}")))?;
    Ok((from_v(&(b[0] * sol[0] + b[1] * sol[1])), cond))
}

/// Leading-order field: curl(hat h^(2) curl v0) = f.
pub fn solve_v0(problem: &TorusProblem, t: &HomTensors) -> Result<MacroField> {
    let h2 = t.hat(2)?;
    check_spd(h2)?;
    let mut out = Vec::with_capacity(problem.source.modes.len());
    for (k, f) in &problem.source.modes {
        let q = problem.source.q(*k);
        let (v, _) = solve_perp(&mode_operator(h2, q), *f, q)?;
        out.push((*k, v));
    }
    MacroField::new(problem.period, out)
}

fn check_spd(h2: &ConstTensor) -> Result<()> {
    crate::cell::check_spd(h2, 1e-12)
}

/// v_0 ... v_K and the largest relative re-substitution residual.
#[derive(Clone, Debug, Serialize)]
pub struct Cascade {
    pub levels: Vec<MacroField>,
    pub residual: f64,
}

impl Cascade {
    /// sum_{l<=K} eps^l v_l
    pub fn truncated_sum(&self, eps: f64, kmax: usize) -> Result<MacroField> {
        if kmax >= self.levels.len() {
            return Err(Error::MissingLevel(kmax));
        }
        let mut acc = self.levels[0].clone();
        for l in 1..=kmax {
            acc = acc.axpy(eps.powi(l as i32), &self.levels[l])?;
        }
        Ok(acc)
    }
}

/// Cascade of the asymptotic expansion: P_0 v_l = -sum_{j=1..l} P_j v_{l-j}.
pub fn cascade(problem: &TorusProblem, t: &HomTensors, kmax: usize) -> Result<Cascade> {
    for r in 2..=kmax + 2 {
        t.hat(r)?;
    }
    check_spd(t.hat(2)?)?;
    let nm = problem.source.modes.len();
    let mut levels: Vec<Vec<C3>> = Vec::with_capacity(kmax + 1);
    let mut residual: f64 = 0.0;
    for l in 0..=kmax {
        let mut lv = Vec::with_capacity(nm);
        for (mi, (k, f)) in problem.source.modes.iter().enumerate() {
            let q = problem.source.q(*k);
            let mut rhs = if l == 0 { to_v(*f) } else { Vector3::zeros() };
            for j in 1..=l {
                rhs -= mode_operator(t.hat(j + 2)?, q) * to_v(levels[l - j][mi]);
            }
            let p0 = mode_operator(t.hat(2)?, q);
            let (v, _) = solve_perp(&p0, from_v(&rhs), q)?;
            // re-substitution: sum_{j<=l} P_j v_{l-j} = delta_{l0} f
            let mut check = p0 * to_v(v);
            for j in 1..=l {
                check += mode_operator(t.hat(j + 2)?, q) * to_v(levels[l - j][mi]);
            }
            let target = if l == 0 { to_v(*f) } else { Vector3::zeros() };
            let scale = to_v(*f).norm().max(1e-300);
            residual = residual.max((check - target).norm() / scale);
            lv.push(v);
        }
        levels.push(lv);
    }
    let levels = levels
        .into_iter()
        .map(|lv| MacroField::new(problem.period, problem.source.modes.iter().map(|(k, _)| *k).zip(lv).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Cascade { levels, residual })
}

/// Per-mode diagnostics of a truncated solve.
#[derive(Clone, Debug, Serialize)]
pub struct ModeConditioning {
    pub k: [i64; 3],
    pub condition: f64,
    /// Smallest eigenvalue of the Hermitian part on the orthogonal plane.
    pub min_eigenvalue: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TruncatedSolution {
    pub v: MacroField,
    pub conditioning: Vec<ModeConditioning>,
    pub warnings: Vec<String>,
    /// Largest relative re-substitution residual.
    pub residual: f64,
}

fn hermitian_min_eig(m: &Matrix2<C64>) -> f64 {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    // eigenvalues of a 2x2 Hermitian matrix
    let a = h[(0, 0)].re;
    let d = h[(1, 1)].re;
    let b = h[(0, 1)].norm();
    0.5 * (a + d) - (0.25 * (a - d) * (a - d) + b * b).sqrt()
}

fn truncated_solve(problem: &TorusProblem, op: impl Fn([f64; 3]) -> Result<Matrix3<C64>>, label: &str) -> Result<TruncatedSolution> {
    let mut modes = Vec::new();
    let mut conditioning = Vec::new();
    let mut warnings = Vec::new();
    let mut residual: f64 = 0.0;
    for (k, f) in &problem.source.modes {
        let q = problem.source.q(*k);
        let p = op(q)?;
        let (m, _) = restrict(&p, q);
        let cond = cond2(&m);
        let min_eig = hermitian_min_eig(&m);
        conditioning.push(ModeConditioning { k: *k, condition: cond, min_eigenvalue: min_eig });
        if min_eig <= 0.0 {
            warnings.push(format!("{label}: mode {k:?} is not elliptic (min eigenvalue {min_eig:.3e})"));
        }
        match solve_perp(&p, *f, q) {
            Ok((v, _)) if cond.is_finite() && cond < 1e14 => {
                let r = (p * to_v(v) - to_v(*f)).norm() / to_v(*f).norm().max(1e-300);
                residual = residual.max(r);
                modes.push((*k, v));
            }
            _ => {
                warnings.push(format!("{label}: mode {k:?} is not invertible (condition {cond:.3e}); set to zero"));
                modes.push((*k, [c0(); 3]));
            }
        }
    }
    Ok(TruncatedSolution { v: MacroField::new(problem.period, modes)?, conditioning, warnings, residual })
}

/// Truncation of the formal infinite-order equation: sum_{j<=K} eps^j P_j v = f.
/// Non-elliptic or singular modes are reported in `warnings`.
pub fn solve_truncated_asymptotic(problem: &TorusProblem, t: &HomTensors, kmax: usize) -> Result<TruncatedSolution> {
    for r in 2..=kmax + 2 {
        t.hat(r)?;
    }
    truncated_solve(
        problem,
        |q| {
            let mut p = Matrix3::zeros();
            for j in 0..=kmax {
                p += mode_operator(t.hat(j + 2)?, q) * C64::new(problem.eps.powi(j as i32), 0.0);
            }
            Ok(p)
        },
        "asymptotic truncation",
    )
}

/// Minimiser of the truncated energy built from h~^(j,k), j, k <= K.
pub fn solve_truncated_el(problem: &TorusProblem, t: &HomTensors, kmax: usize) -> Result<TruncatedSolution> {
    truncated_solve(problem, |q| el_operator(t, kmax, problem.eps, q), "variational truncation")
}

/// Truncated energy E_K(v) = 1/2 int B curl v . curl v - int f . v.
pub fn el_energy(problem: &TorusProblem, t: &HomTensors, kmax: usize, v: &MacroField) -> Result<f64> {
    let mut e = 0.0;
    for (k, f) in &problem.source.modes {
        let q = problem.source.q(*k);
        let vv = to_v(v.amplitude(*k).unwrap_or([c0(); 3]));
        let p = el_operator(t, kmax, problem.eps, q)?;
        e += 0.5 * vv.dotc(&(p * vv)).re - to_v(*f).dotc(&vv).re;
    }
    Ok(2.0 * problem.period.powi(3) * e)
}

/// -1/2 int f . v
pub fn work_energy(problem: &TorusProblem, v: &MacroField) -> f64 {
    -0.5 * problem.source.inner(v)
}

/// Scalar cell function times a constant vector.
#[derive(Clone, Debug)]
pub struct TwoScaleTerm<S> {
    pub g: S,
    pub c: C3,
}

#[derive(Clone, Debug)]
pub struct TwoScaleMode<S> {
    pub k: [i64; 3],
    pub q: [f64; 3],
    pub terms: Vec<TwoScaleTerm<S>>,
}

/// u(x) = sum_modes 2 Re( sum_terms g(x/eps + zeta) c exp(i q . x) ).
#[derive(Clone, Debug)]
pub struct TwoScaleField<S> {
    pub period: f64,
    pub eps: f64,
    pub zeta: [f64; 3],
    pub modes: Vec<TwoScaleMode<S>>,
}

fn iq_power(q: [f64; 3], idx: &[usize]) -> C64 {
    idx.iter().fold(C64::new(1.0, 0.0), |acc, &d| acc * I * q[d])
}

/// Two-scale approximation v + sum_j eps^j (grad_y phi_j + grad_x phi_{j-1}
/// + N^(j) grad^{j-1} curl v), with phi_j = K^(j) grad^j v. The hierarchy must
/// hold N^(1..K) and K^(1..K).
pub fn reconstruct_uk<M: CellMedium>(
    h: &CellHierarchy<M>,
    v: &MacroField,
    eps: f64,
    zeta: [f64; 3],
    kmax: usize,
) -> Result<TwoScaleField<M::Scalar>> {
    let md = &h.medium;
    for j in 1..=kmax {
        h.level(j)?;
        h.k(j)?;
    }
    let nonzero = |s: &M::Scalar| md.rms(s) > 0.0;
    let mut modes = Vec::with_capacity(v.modes.len());
    for (k, vh) in &v.modes {
        let q = v.q(*k);
        let wh = curl_amplitude(q, *vh);
        let mut terms = vec![TwoScaleTerm { g: md.constant(1.0), c: *vh }];
        for j in 1..=kmax {
            let ej = eps.powi(j as i32);
            let n = &h.level(j)?.n;
            for idx in multi_indices(j + 1) {
                let g = n.at(&idx);
                if !nonzero(g) {
                    continue;
                }
                let coef = iq_power(q, &idx[1..j]) * wh[idx[j]] * ej;
                if coef.norm() == 0.0 {
                    continue;
                }
                let mut c = [c0(); 3];
                c[idx[0]] = coef;
                terms.push(TwoScaleTerm { g: g.clone(), c });
            }
            let kj = h.k(j)?;
            for idx in multi_indices(j + 1) {
                let g = kj.at(&idx);
                if !nonzero(g) {
                    continue;
                }
                let base = iq_power(q, &idx[..j]) * vh[idx[j]] * ej;
                for s in 0..3 {
                    let d = md.deriv(g, s);
                    if !nonzero(&d) {
                        continue;
                    }
                    let mut c = [c0(); 3];
                    c[s] = base;
                    terms.push(TwoScaleTerm { g: d, c });
                }
            }
            if j >= 2 {
                let km = h.k(j - 1)?;
                for idx in multi_indices(j) {
                    let g = km.at(&idx);
                    if !nonzero(g) {
                        continue;
                    }
                    let base = iq_power(q, &idx[..j - 1]) * vh[idx[j - 1]] * ej;
                    let c = [0, 1, 2].map(|s| base * I * q[s]);
                    terms.push(TwoScaleTerm { g: g.clone(), c });
                }
            }
        }
        modes.push(TwoScaleMode { k: *k, q, terms });
    }
    Ok(TwoScaleField { period: v.period, eps, zeta, modes })
}

impl<S> TwoScaleField<S> {
    /// Fine grid size per axis for `p` points per fast period.
    pub fn fine_points(&self, p: usize) -> usize {
        (self.period / self.eps).round() as usize * p
    }

    /// Values, curl and divergence on the fine grid with `p` points per fast
    /// period (first axis fastest). The shift must lie on the cell grid.
    pub fn eval_grid<M: CellMedium<Scalar = S>>(&self, md: &M, p: usize) -> Result<GridTriple> {
        if p < 8 {
            return Err(Error::GridTooCoarse { points: p });
        }
        let shift: [usize; 3] = {
            let s = self.zeta.map(|z| z * p as f64);
            if s.iter().any(|v| (v - v.round()).abs() > 1e-9) {
                return Err(Error::GridMismatch("shift is not a multiple of the cell grid spacing".into()));
            }
            s.map(|v| v.round().rem_euclid(p as f64) as usize)
        };
        let nf = self.fine_points(p);
        let len = nf * nf * nf;
        let mut val = [vec![0.0; len], vec![0.0; len], vec![0.0; len]];
        let mut curl = [vec![0.0; len], vec![0.0; len], vec![0.0; len]];
        let mut div = vec![0.0; len];
        let h = self.period / nf as f64;
        let cell = |i: [usize; 3]| (i[0] + shift[0]) % p + p * ((i[1] + shift[1]) % p + p * ((i[2] + shift[2]) % p));
        for m in &self.modes {
            // per-term samples of g and of its cell gradient
            let mut sampled = Vec::with_capacity(m.terms.len());
            for t in &m.terms {
                let g = md.sample_grid(&t.g, p)?;
                let dg = [0, 1, 2].map(|a| md.sample_grid(&md.deriv(&t.g, a), p));
                sampled.push((g, [dg[0].clone()?, dg[1].clone()?, dg[2].clone()?]));
            }
            for i2 in 0..nf {
                for i1 in 0..nf {
                    for i0 in 0..nf {
                        let f = i0 + nf * (i1 + nf * i2);
                        let x = [i0 as f64 * h, i1 as f64 * h, i2 as f64 * h];
                        let ph = C64::from_polar(1.0, m.q[0] * x[0] + m.q[1] * x[1] + m.q[2] * x[2]);
                        let ci = cell([i0, i1, i2]);
                        let mut u = [c0(); 3];
                        // grad[a][b] = d_a u_b
                        let mut grad = [[c0(); 3]; 3];
                        for (t, (g, dg)) in m.terms.iter().zip(&sampled) {
                            for b in 0..3 {
                                u[b] += t.c[b] * g[ci];
                                for a in 0..3 {
                                    grad[a][b] += t.c[b] * (I * m.q[a] * g[ci] + dg[a][ci] / self.eps);
                                }
                            }
                        }
                        for b in 0..3 {
                            val[b][f] += 2.0 * (u[b] * ph).re;
                        }
                        let cu = [grad[1][2] - grad[2][1], grad[2][0] - grad[0][2], grad[0][1] - grad[1][0]];
                        for b in 0..3 {
                            curl[b][f] += 2.0 * (cu[b] * ph).re;
                        }
                        div[f] += 2.0 * ((grad[0][0] + grad[1][1] + grad[2][2]) * ph).re;
                    }
                }
            }
        }
        Ok(GridTriple { n: nf, period: self.period, value: val, curl, div })
    }
}

/// A vector field, its curl and its divergence sampled on an n^3 torus grid.
#[derive(Clone, Debug)]
pub struct GridTriple {
    pub n: usize,
    pub period: f64,
    pub value: [Vec<f64>; 3],
    pub curl: [Vec<f64>; 3],
    pub div: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn iso(a: f64) -> HomTensors {
        HomTensors { hat_h: vec![ConstTensor::identity().scale(a), ConstTensor::zeros(3).unwrap()], tilde: BTreeMap::new() }
    }

    #[test]
    fn single_mode_inversion() {
        // hat h = I, f = (2pi/T)^2 (sin(2 pi x_2 / T), 0, 0) -> v0 = (sin(2 pi x_2 / T), 0, 0)
        let t = 2.0;
        let q = 2.0 * PI / t;
        // sin(s) = 2 Re(-i/2 e^{is})
        let f = MacroField::new(t, vec![([0, 1, 0], [C64::new(0.0, -0.5 * q * q), c0(), c0()])]).unwrap();
        let p = TorusProblem::new(t, 0.5, f).unwrap();
        let v = solve_v0(&p, &iso(1.0)).unwrap();
        for x2 in [0.1, 0.7, 1.3] {
            let val = v.eval([0.3, x2, 0.9]);
            assert!((val[0] - (q * x2).sin()).abs() < 1e-14);
            assert!(val[1].abs() < 1e-14 && val[2].abs() < 1e-14);
        }
    }

    #[test]
    fn zero_source_gives_zero() {
        let p = TorusProblem::new(1.0, 0.25, MacroField::zero(1.0)).unwrap();
        assert!(solve_v0(&p, &iso(2.0)).unwrap().modes.is_empty());
    }

    #[test]
    fn problem_validation() {
        let f = MacroField::curl_of(1.0, &[([1, 0, 0], [c0(), C64::new(1.0, 0.0), c0()])]).unwrap();
        assert!(TorusProblem::new(1.0, 0.3, f.clone()).is_err());
        assert!(TorusProblem::new(1.0, 0.25, f).is_ok());
        let bad = MacroField::new(1.0, vec![([1, 0, 0], [C64::new(1.0, 0.0), c0(), c0()])]).unwrap();
        assert!(TorusProblem::new(1.0, 0.25, bad).is_err());
        assert!(MacroField::new(1.0, vec![([1, 0, 0], [c0(); 3]), ([-1, 0, 0], [c0(); 3])]).is_err());
    }

    #[test]
    fn perp_basis_is_orthonormal() {
        for q in [[1.0, 0.0, 0.0], [0.3, -2.0, 0.5], [0.0, 0.0, 4.0]] {
            let (a, b) = perp_basis(q);
            let d = |u: [f64; 3], v: [f64; 3]| u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
            assert!(d(a, q).abs() < 1e-14 && d(b, q).abs() < 1e-14 && d(a, b).abs() < 1e-15);
            assert!((d(a, a) - 1.0).abs() < 1e-15 && (d(b, b) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn homogeneous_cascade_vanishes() {
        let f = MacroField::curl_of(1.0, &[([1, 2, 0], [C64::new(0.2, 0.1), c0(), C64::new(1.0, 0.0)])]).unwrap();
        let p = TorusProblem::new(1.0, 0.125, f).unwrap();
        let mut t = iso(1.5);
        t.hat_h.push(ConstTensor::zeros(4).unwrap());
        let c = cascade(&p, &t, 2).unwrap();
        assert!(c.levels[1].l2_norm() == 0.0 && c.levels[2].l2_norm() == 0.0);
        assert!(c.residual < 1e-14);
        assert!(c.levels[0].max_divergence() < 1e-13);
        assert!(cascade(&p, &t, 3).is_err());
    }
}
