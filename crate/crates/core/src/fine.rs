//! Direct solutions of the oscillatory problem and the verification harness
//! built on them: remainders of the two-scale approximation, energies of the
//! truncated functionals, oscillatory integrals and the torus Poincare bound.
//!
//! Stratified media (coefficient depending on x_2 / eps only) are solved per
//! transverse Fourier mode with 1D spectral elements. General 3D media use
//! the reference-medium PCG solver on the full torus grid.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cell::layered::LayeredMedium;
use crate::cell::CellHierarchy;
use crate::error::{Error, Result};
use crate::homogenised::{
    c0, cascade, el_energy, solve_truncated_el, wavevector, work_energy, HomTensors, MacroField, TorusProblem, TwoScaleField, C3,
};
use crate::laminate::pp::CellFn1D;
use crate::laminate::LaminateProfile;
use crate::sem::{solve_mode, ElementValues, ModeSolution, SemMesh};
use crate::spectral::{CoefField, CurlCurlSolver, Grid3, KrylovLog};

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Coefficient alpha(y_2) of a stratified medium.
#[derive(Clone, Debug, PartialEq)]
pub enum Stratified {
    Layers(LaminateProfile),
    /// mean + amplitude * sin(2 pi y_2)
    Sinusoid { mean: f64, amplitude: f64 },
    /// Pointwise reciprocal of another coefficient.
    Inverse(Box<Stratified>),
}

impl Stratified {
    pub fn eval(&self, y2: f64) -> f64 {
        match self {
            Stratified::Layers(p) => p.eval(y2),
            Stratified::Sinusoid { mean, amplitude } => mean + amplitude * (2.0 * PI * y2).sin(),
            Stratified::Inverse(s) => 1.0 / s.eval(y2),
        }
    }

    pub fn reciprocal(&self) -> Stratified {
        match self {
            Stratified::Layers(p) => Stratified::Layers(p.reciprocal()),
            Stratified::Inverse(s) => (**s).clone(),
            other => Stratified::Inverse(Box::new(other.clone())),
        }
    }

    /// Element break points in [0, 1); the coefficient is smooth between them.
    fn cell_breaks(&self) -> Vec<f64> {
        match self {
            Stratified::Layers(p) => p.breaks()[..p.breaks().len() - 1].to_vec(),
            Stratified::Sinusoid { .. } => vec![0.0, 0.25, 0.5, 0.75],
            Stratified::Inverse(s) => s.cell_breaks(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Stratified::Sinusoid { mean, amplitude } if !(mean.is_finite() && amplitude.is_finite() && amplitude.abs() < *mean) => {
                Err(Error::InvalidProfile(format!("sinusoid {mean} + {amplitude} sin is not positive")))
            }
            Stratified::Inverse(s) => s.validate(),
            _ => Ok(()),
        }
    }

    /// Samples on the unit n^3 grid, for the 3D solver.
    pub fn sample(&self, n: usize) -> Result<CoefField> {
        let g = Grid3::unit(n)?;
        Ok(CoefField::Scalar((0..g.len()).map(|p| self.eval(g.coords(p)[1] as f64 / n as f64)).collect()))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LaminateOptions {
    /// Polynomial degree per element.
    pub degree: usize,
    /// Elements per smooth piece of one cell.
    pub subdivisions: usize,
}

impl Default for LaminateOptions {
    fn default() -> Self {
        LaminateOptions { degree: 12, subdivisions: 1 }
    }
}

/// Canonical transverse wave number: (k1, k3) with k1 > 0, or k1 = 0 and k3 >= 0.
fn orient(k: [i64; 3]) -> (bool, [i64; 3]) {
    if k[0] > 0 || (k[0] == 0 && k[2] >= 0) {
        (false, k)
    } else {
        (true, k.map(|v| -v))
    }
}

/// Real fields grouped by transverse wave number. For every group the field
/// is 2 Re(U(x_2) exp(i (q1 x1 + q3 x3))), or U(x_2) itself when q1 = q3 = 0.
#[derive(Clone, Debug)]
struct Group {
    t: [i64; 2],
    /// (q2, amplitude) terms of the source in this group
    source: Vec<(f64, C3)>,
}

impl Group {
    fn weight(&self) -> f64 {
        if self.t == [0, 0] {
            1.0
        } else {
            2.0
        }
    }
}

fn groups_of(field: &MacroField) -> Vec<Group> {
    let mut map: BTreeMap<[i64; 2], Vec<(f64, C3)>> = BTreeMap::new();
    for (k, c) in &field.modes {
        let (flip, ko) = orient(*k);
        let q = wavevector(field.period, ko);
        let co = if flip { c.map(|v| v.conj()) } else { *c };
        let e = map.entry([ko[0], ko[2]]).or_default();
        e.push((q[1], co));
        if ko[0] == 0 && ko[2] == 0 {
            e.push((-q[1], co.map(|v| v.conj())));
        }
    }
    map.into_iter().map(|(t, source)| Group { t, source }).collect()
}

pub fn eval_terms(terms: &[(f64, C3)], x: f64) -> C3 {
    let mut out = [c0(); 3];
    for (q2, c) in terms {
        let ph = C64::from_polar(1.0, q2 * x);
        for i in 0..3 {
            out[i] += c[i] * ph;
        }
    }
    out
}

/// Direct solution on a stratified medium.
#[derive(Clone, Debug)]
pub struct LaminateFine {
    pub period: f64,
    pub eps: f64,
    pub shift: f64,
    pub mesh: SemMesh,
    groups: Vec<(Group, ModeSolution)>,
    /// -1/2 int f . u
    pub energy: f64,
    /// -1/2 (int alpha |curl u|^2 + |div u|^2), equal to `energy` at the solution.
    pub energy_form: f64,
}

/// Sum over groups of the weighted quadrature of a per-element quantity.
fn group_integral(period: f64, mesh: &SemMesh, sol: &ModeSolution, w: f64, f: impl Fn(usize, &ElementValues) -> f64) -> f64 {
    let mut s = 0.0;
    for e in 0..mesh.elements() {
        s += f(e, &sol.element_values(mesh, e));
    }
    w * period * period * s
}

impl LaminateFine {
    pub fn residual(&self) -> f64 {
        (self.energy - self.energy_form).abs() / self.energy.abs().max(1e-300)
    }

    /// Macroscopic Fourier amplitude of the solution at mode k.
    pub fn amplitude(&self, k: [i64; 3]) -> C3 {
        let (flip, ko) = orient(k);
        let q2 = wavevector(self.period, ko)[1];
        let Some((_, sol)) = self.groups.iter().find(|(g, _)| g.t == [ko[0], ko[2]]) else {
            return [c0(); 3];
        };
        let mut acc = [c0(); 3];
        for e in 0..self.mesh.elements() {
            let ev = sol.element_values(&self.mesh, e);
            for ((x, w), u) in ev.x.iter().zip(&ev.w).zip(&ev.u) {
                let ph = C64::from_polar(*w / self.period, -q2 * x);
                for i in 0..3 {
                    acc[i] += u[i] * ph;
                }
            }
        }
        if flip {
            acc.map(|v| v.conj())
        } else {
            acc
        }
    }

    /// Macroscopic part on the given mode set.
    pub fn macro_band(&self, modes: &MacroField) -> Result<MacroField> {
        MacroField::new(self.period, modes.modes.iter().map(|(k, _)| (*k, self.amplitude(*k))).collect())
    }

    pub fn l2_norm(&self) -> f64 {
        self.groups
            .iter()
            .map(|(g, s)| {
                group_integral(self.period, &self.mesh, s, g.weight(), |_, ev| {
                    ev.u.iter().zip(&ev.w).map(|(u, w)| w * u.iter().map(|v| v.norm_sqr()).sum::<f64>()).sum()
                })
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Point value of the real solution.
    pub fn eval(&self, x: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (g, s) in &self.groups {
            let q = wavevector(self.period, [g.t[0], 0, g.t[1]]);
            let u = s.value_at(&self.mesh, x[1]);
            if g.t == [0, 0] {
                for i in 0..3 {
                    out[i] += u[i].re;
                }
            } else {
                let ph = C64::from_polar(1.0, q[0] * x[0] + q[2] * x[2]);
                for i in 0..3 {
                    out[i] += 2.0 * (u[i] * ph).re;
                }
            }
        }
        out
    }

    /// Visits every transverse group: (q1, q3, weight, solution).
    pub fn for_each_group(&self, mut f: impl FnMut(f64, f64, f64, &ModeSolution)) {
        for (g, s) in &self.groups {
            let q = wavevector(self.period, [g.t[0], 0, g.t[1]]);
            f(q[0], q[2], g.weight(), s);
        }
    }

    /// Source terms (q2, amplitude) of the group with transverse wave vector (q1, q3).
    pub fn group_source(&self, q1: f64, q3: f64) -> Vec<(f64, C3)> {
        for (g, _) in &self.groups {
            let q = wavevector(self.period, [g.t[0], 0, g.t[1]]);
            if q[0] == q1 && q[2] == q3 {
                return g.source.clone();
            }
        }
        Vec::new()
    }

    /// Maximum pointwise |div u| over quadrature points.
    pub fn max_divergence(&self) -> f64 {
        let mut m: f64 = 0.0;
        for (g, s) in &self.groups {
            let q = wavevector(self.period, [g.t[0], 0, g.t[1]]);
            for e in 0..self.mesh.elements() {
                for d in s.element_values(&self.mesh, e).div(q[0], q[2]) {
                    m = m.max(d.norm());
                }
            }
        }
        m
    }
}

/// Exact-geometry solve for a stratified coefficient alpha((x_2 / eps) + shift).
pub fn laminate_direct_solve(problem: &TorusProblem, medium: &Stratified, shift: f64, opts: &LaminateOptions) -> Result<LaminateFine> {
    solve_stratified(problem, medium, shift, opts, None)
}

/// As `laminate_direct_solve`, with the right-hand side curl(beta(x/eps) J)
/// where J is the problem source and beta a stratified factor.
pub fn laminate_flux_solve(
    problem: &TorusProblem,
    medium: &Stratified,
    beta: &Stratified,
    shift: f64,
    opts: &LaminateOptions,
) -> Result<LaminateFine> {
    beta.validate()?;
    solve_stratified(problem, medium, shift, opts, Some(beta))
}

fn solve_stratified(
    problem: &TorusProblem,
    medium: &Stratified,
    shift: f64,
    opts: &LaminateOptions,
    beta: Option<&Stratified>,
) -> Result<LaminateFine> {
    medium.validate()?;
    let (t, eps) = (problem.period, problem.eps);
    let cells = problem.cells();
    let mut pts: Vec<f64> = Vec::new();
    for m in 0..cells {
        for b in medium.cell_breaks() {
            pts.push(((m as f64 + b - shift) * eps).rem_euclid(t));
        }
    }
    pts.sort_by(|a, b| a.total_cmp(b));
    pts.dedup_by(|a, b| (*a - *b).abs() < 1e-14 * t);
    let x0 = pts[0];
    pts.push(x0 + t);
    let sub = opts.subdivisions.max(1);
    let mut edges = Vec::with_capacity((pts.len() - 1) * sub + 1);
    for w in pts.windows(2) {
        for s in 0..sub {
            edges.push(w[0] + (w[1] - w[0]) * s as f64 / sub as f64);
        }
    }
    edges.push(x0 + t);
    let mesh = SemMesh::with_coefficient(edges, |x| medium.eval((x / eps + shift).rem_euclid(1.0)), opts.degree)?;
    let groups = groups_of(&problem.source);
    let solved: Vec<(Group, ModeSolution)> = groups
        .into_par_iter()
        .map(|g| {
            let q = wavevector(t, [g.t[0], 0, g.t[1]]);
            let src = g.source.clone();
            let sol = match beta {
                None => solve_mode(&mesh, q[0], q[2], &|x| eval_terms(&src, x), None)?,
                Some(b) => {
                    let gf = |x: f64| eval_terms(&src, x).map(|v| v * b.eval((x / eps + shift).rem_euclid(1.0)));
                    solve_mode(&mesh, q[0], q[2], &|_| [c0(); 3], Some(&gf))?
                }
            };
            Ok((g, sol))
        })
        .collect::<Result<_>>()?;
    let mut work = 0.0;
    let mut form = 0.0;
    for (g, s) in &solved {
        let q = wavevector(t, [g.t[0], 0, g.t[1]]);
        work += group_integral(t, &mesh, s, g.weight(), |_, ev| {
            let cu = ev.curl(q[0], q[2]);
            (0..ev.x.len())
                .map(|i| {
                    let x = ev.x[i];
                    let f = eval_terms(&g.source, x);
                    // pair the source with u, or its flux with curl u
                    let (f, u) = match beta {
                        None => (f, ev.u[i]),
                        Some(b) => (f.map(|v| v * b.eval((x / eps + shift).rem_euclid(1.0))), cu[i]),
                    };
                    ev.w[i] * (0..3).map(|a| (f[a] * u[a].conj()).re).sum::<f64>()
                })
                .sum()
        });
        form += group_integral(t, &mesh, s, g.weight(), |e, ev| {
            let al = mesh.alpha_at(e);
            let cu = ev.curl(q[0], q[2]);
            let dv = ev.div(q[0], q[2]);
            (0..ev.x.len()).map(|i| ev.w[i] * (al[i] * cu[i].iter().map(|v| v.norm_sqr()).sum::<f64>() + dv[i].norm_sqr())).sum()
        });
    }
    Ok(LaminateFine { period: t, eps, shift, mesh, groups: solved, energy: -0.5 * work, energy_form: -0.5 * form })
}

/// Direct solution on the full torus grid.
#[derive(Clone, Debug)]
pub struct GridFine {
    pub grid: Arc<Grid3>,
    pub u: [Vec<f64>; 3],
    /// -1/2 int f . u
    pub energy: f64,
    /// -1/2 int A curl u . curl u
    pub energy_form: f64,
    pub log: KrylovLog,
}

impl GridFine {
    pub fn residual(&self) -> f64 {
        (self.energy - self.energy_form).abs() / self.energy.abs().max(1e-300)
    }
}

/// Reference-medium PCG on the torus with the cell coefficient `cell` (given on
/// an n^3 unit grid) tiled T/eps times per axis.
pub fn direct_solve(problem: &TorusProblem, cell: &CoefField, n: usize, tol: f64) -> Result<GridFine> {
    if cell.len() != n * n * n {
        return Err(Error::GridMismatch(format!("cell coefficient has {} points, expected {n}^3", cell.len())));
    }
    let nf = problem.cells() * n;
    let t = problem.period;
    let grid = Arc::new(Grid3::new([nf; 3], [t; 3])?);
    let cell_index = |p: usize| {
        let c = grid.coords(p);
        c[0] % n + n * (c[1] % n + n * (c[2] % n))
    };
    let coef = match cell {
        CoefField::Scalar(a) => CoefField::Scalar((0..grid.len()).map(|p| a[cell_index(p)]).collect()),
        CoefField::Symmetric(m) => {
            CoefField::Symmetric(Box::new([0, 1, 2, 3, 4, 5].map(|s| (0..grid.len()).map(|p| m[s][cell_index(p)]).collect())))
        }
    };
    let mut solver = CurlCurlSolver::new(grid.clone(), coef)?;
    solver.tol = tol;
    solver.max_iter = 2000;
    let len = grid.len();
    let mut b = [vec![c0(); len], vec![c0(); len], vec![c0(); len]];
    let half = nf as i64 / 2;
    let slot = |k: i64| -> Result<usize> {
        if k.abs() >= half {
            return Err(Error::GridMismatch(format!("source wave number {k} is not resolved by {nf} points")));
        }
        Ok(k.rem_euclid(nf as i64) as usize)
    };
    for (k, c) in &problem.source.modes {
        let p = grid.index([slot(k[0])?, slot(k[1])?, slot(k[2])?]);
        let m = grid.index([slot(-k[0])?, slot(-k[1])?, slot(-k[2])?]);
        for i in 0..3 {
            b[i][p] += c[i];
            b[i][m] += c[i].conj();
        }
    }
    let (us, log) = solver.solve(&b)?;
    let vol = t * t * t;
    let mut work = 0.0;
    for i in 0..3 {
        for (x, y) in b[i].iter().zip(&us[i]) {
            work += (x * y.conj()).re;
        }
    }
    let cu = solver.curl_spec(&us).map(|s| grid.inverse_real(&s));
    let acu = solver.coef.apply(&cu);
    let form: f64 = (0..3).map(|i| acu[i].iter().zip(&cu[i]).map(|(a, c)| a * c).sum::<f64>()).sum::<f64>() / len as f64;
    let u = us.map(|s| grid.inverse_real(&s));
    Ok(GridFine { grid, u, energy: -0.5 * vol * work, energy_form: -0.5 * vol * form, log })
}

/// Solutions for each shift and the average of their macroscopic parts.
#[derive(Clone, Debug)]
pub struct ShiftEnsemble {
    pub shifts: Vec<f64>,
    pub solutions: Vec<LaminateFine>,
    pub average: MacroField,
    /// Mean of the energies over the shifts.
    pub energy: f64,
}

impl ShiftEnsemble {
    /// max / min of the solution L^2 norms over the shifts.
    pub fn norm_ratio(&self) -> f64 {
        let n: Vec<f64> = self.solutions.iter().map(|s| s.l2_norm()).collect();
        let (lo, hi) = n.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
        if lo == 0.0 {
            1.0
        } else {
            hi / lo
        }
    }
}

/// Uniform shifts j / count, j = 0..count.
pub fn uniform_shifts(count: usize) -> Vec<f64> {
    (0..count).map(|j| j as f64 / count as f64).collect()
}

/// Solves the shifted problems and averages their macroscopic parts.
pub fn shift_ensemble(problem: &TorusProblem, medium: &Stratified, shifts: &[f64], opts: &LaminateOptions) -> Result<ShiftEnsemble> {
    if shifts.is_empty() {
        return Err(Error::InvalidProblem("empty shift grid".into()));
    }
    let solutions: Vec<LaminateFine> =
        shifts.par_iter().map(|z| laminate_direct_solve(problem, medium, *z, opts)).collect::<Result<_>>()?;
    let mut average = problem.source.map(|_, _, _| [c0(); 3]);
    for s in &solutions {
        average = average.axpy(1.0 / shifts.len() as f64, &s.macro_band(&problem.source)?)?;
    }
    let energy = solutions.iter().map(|s| s.energy).sum::<f64>() / shifts.len() as f64;
    Ok(ShiftEnsemble { shifts: shifts.to_vec(), solutions, average, energy })
}

/// Least squares fit of log y = slope log x + intercept.
#[derive(Clone, Debug, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope (zero for an exact fit).
    pub stderr: f64,
    pub samples: usize,
}

pub fn fit_slope(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).map(|(a, b)| (a.ln(), b.ln())).collect();
    let n = pts.len();
    if n < 3 || x.len() != y.len() {
        return Err(Error::TooFewSamples(n));
    }
    if pts.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::InvalidProblem("slope fit needs positive finite samples".into()));
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let stderr = (sse / (nf - 2.0) / sxx).sqrt();
    Ok(SlopeFit { slope, intercept, stderr, samples: n })
}

/// Remainder u - u^(K) restricted to one transverse group.
struct LineRemainder<'a> {
    fine: &'a LaminateFine,
    sol: &'a ModeSolution,
    group: [i64; 2],
    weight: f64,
    /// (g, g', c, q2)
    terms: Vec<(CellFn1D, CellFn1D, C3, f64)>,
}

impl LineRemainder<'_> {
    /// Values and x_2-derivatives of R at the quadrature points of element e.
    fn element(&self, e: usize) -> ElementValues {
        let mut ev = self.sol.element_values(&self.fine.mesh, e);
        let (eps, z) = (self.fine.eps, self.fine.shift);
        for (i, x) in ev.x.iter().enumerate() {
            let y = x / eps + z;
            for (g, dg, c, q2) in &self.terms {
                let ph = C64::from_polar(1.0, q2 * x);
                let (gv, dv) = (g.eval(y), dg.eval(y));
                for a in 0..3 {
                    ev.u[i][a] -= c[a] * gv * ph;
                    ev.du[i][a] -= c[a] * ph * (I * q2 * gv + dv / eps);
                }
            }
        }
        ev
    }
}

fn line_remainders<'a>(fine: &'a LaminateFine, approx: &TwoScaleField<CellFn1D>) -> Vec<LineRemainder<'a>> {
    let mut out = Vec::new();
    for (g, sol) in &fine.groups {
        let mut terms = Vec::new();
        for m in &approx.modes {
            let (flip, ko) = orient(m.k);
            if [ko[0], ko[2]] != g.t {
                continue;
            }
            let both = g.t == [0, 0];
            for t in &m.terms {
                let dg = t.g.deriv();
                let (c, q2) = if flip { (t.c.map(|v| v.conj()), -m.q[1]) } else { (t.c, m.q[1]) };
                terms.push((t.g.clone(), dg.clone(), c, q2));
                if both {
                    terms.push((t.g.clone(), dg, c.map(|v| v.conj()), -q2));
                }
            }
        }
        out.push(LineRemainder { fine, sol, group: g.t, weight: g.weight(), terms });
    }
    out
}

/// Norms of the remainder of one (K, eps) pair.
#[derive(Clone, Debug, Serialize)]
pub struct RemainderNorms {
    pub order: usize,
    pub eps: f64,
    pub curl: f64,
    pub div_hminus1: f64,
    pub mean: f64,
    pub l2: f64,
    pub fine_energy: f64,
    pub energy_residual: f64,
}

/// Remainder norms for a fine solution against a two-scale field.
pub fn remainder_norms(fine: &LaminateFine, approx: &TwoScaleField<CellFn1D>, order: usize) -> RemainderNorms {
    let t = fine.period;
    let cutoff = (40.0 * t / fine.eps).ceil() as i64;
    let (mut curl2, mut div2, mut l22) = (0.0, 0.0, 0.0);
    let mut mean = [0.0; 3];
    for lr in line_remainders(fine, approx) {
        let q = wavevector(t, [lr.group[0], 0, lr.group[1]]);
        let mut coef = vec![c0(); 2 * cutoff as usize + 1];
        let (mut c2, mut l2) = (0.0, 0.0);
        for e in 0..fine.mesh.elements() {
            let ev = lr.element(e);
            let cu = ev.curl(q[0], q[2]);
            let dv = ev.div(q[0], q[2]);
            for i in 0..ev.x.len() {
                c2 += ev.w[i] * cu[i].iter().map(|v| v.norm_sqr()).sum::<f64>();
                l2 += ev.w[i] * ev.u[i].iter().map(|v| v.norm_sqr()).sum::<f64>();
                if lr.group == [0, 0] {
                    for a in 0..3 {
                        mean[a] += ev.w[i] * ev.u[i][a].re / t;
                    }
                }
                let step = C64::from_polar(1.0, -2.0 * PI * ev.x[i] / t);
                let mut ph = C64::from_polar(ev.w[i] / t, 2.0 * PI * cutoff as f64 * ev.x[i] / t) * dv[i];
                for c in coef.iter_mut() {
                    *c += ph;
                    ph *= step;
                }
            }
        }
        curl2 += lr.weight * t * t * c2;
        l22 += lr.weight * t * t * l2;
        let base = 1.0 + q[0] * q[0] + q[2] * q[2];
        for (j, c) in coef.iter().enumerate() {
            let m = j as i64 - cutoff;
            if lr.group == [0, 0] && m == 0 {
                continue;
            }
            let km = 2.0 * PI * m as f64 / t;
            div2 += lr.weight * t.powi(3) * c.norm_sqr() / (base + km * km);
        }
    }
    RemainderNorms {
        order,
        eps: fine.eps,
        curl: curl2.sqrt(),
        div_hminus1: div2.sqrt(),
        mean: (mean[0] * mean[0] + mean[1] * mean[1] + mean[2] * mean[2]).sqrt(),
        l2: l22.sqrt(),
        fine_energy: fine.energy,
        energy_residual: fine.residual(),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OrderSlopes {
    pub order: usize,
    pub curl: SlopeFit,
    pub div_hminus1: SlopeFit,
    pub l2: SlopeFit,
}

/// Remainder norms over an eps sweep and their fitted orders.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub eps: Vec<f64>,
    pub rows: Vec<RemainderNorms>,
    pub slopes: Vec<OrderSlopes>,
}

impl ConvergenceReport {
    /// Columns: K, eps, norm, value.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("K,eps,norm,value\n");
        for r in &self.rows {
            for (name, v) in [("curl", r.curl), ("div_hminus1", r.div_hminus1), ("mean", r.mean), ("l2", r.l2)] {
                s.push_str(&format!("{},{:.17e},{},{:.17e}\n", r.order, r.eps, name, v));
            }
        }
        s
    }

    pub fn slopes_for(&self, order: usize) -> Option<&OrderSlopes> {
        self.slopes.iter().find(|s| s.order == order)
    }
}

fn check_eps_list(period: f64, eps: &[f64]) -> Result<()> {
    if eps.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidProblem("eps list must be strictly decreasing".into()));
    }
    for e in eps {
        let r = period / e;
        if (r - r.round()).abs() > 1e-9 * r {
            return Err(Error::InvalidProblem(format!("T/eps = {r} is not an integer")));
        }
    }
    Ok(())
}

/// Laminate hierarchy carrying everything the reconstruction of order `kmax` needs.
pub fn laminate_hierarchy(profile: &LaminateProfile, kmax: usize) -> Result<CellHierarchy<LayeredMedium>> {
    let mut h = CellHierarchy::build(LayeredMedium::new(profile), kmax + 1)?;
    h.solve_k(kmax.max(1))?;
    Ok(h)
}

/// Remainders R^(K) = u - u^(K) for every K and eps, with fitted slopes.
pub fn remainder_report(
    problem: &TorusProblem,
    profile: &LaminateProfile,
    orders: &[usize],
    eps: &[f64],
    opts: &LaminateOptions,
) -> Result<ConvergenceReport> {
    check_eps_list(problem.period, eps)?;
    let kmax = orders.iter().copied().max().unwrap_or(0);
    let h = laminate_hierarchy(profile, kmax)?;
    let tens = HomTensors::from_hierarchy(&h, None)?;
    let medium = Stratified::Layers(profile.clone());
    let mut rows = Vec::new();
    for &e in eps {
        let p = problem.with_eps(e)?;
        let fine = laminate_direct_solve(&p, &medium, 0.0, opts)?;
        let cas = cascade(&p, &tens, kmax)?;
        for &k in orders {
            let v = cas.truncated_sum(e, k)?;
            let approx = crate::homogenised::reconstruct_uk(&h, &v, e, [0.0; 3], k)?;
            rows.push(remainder_norms(&fine, &approx, k));
        }
    }
    let mut slopes = Vec::new();
    if eps.len() >= 3 {
        for &k in orders {
            let r: Vec<&RemainderNorms> = rows.iter().filter(|r| r.order == k).collect();
            let col = |f: fn(&RemainderNorms) -> f64| r.iter().map(|x| f(x)).collect::<Vec<_>>();
            slopes.push(OrderSlopes {
                order: k,
                curl: fit_slope(eps, &col(|x| x.curl))?,
                div_hminus1: fit_slope(eps, &col(|x| x.div_hminus1))?,
                l2: fit_slope(eps, &col(|x| x.l2))?,
            });
        }
    } else {
        return Err(Error::TooFewSamples(eps.len()));
    }
    Ok(ConvergenceReport { eps: eps.to_vec(), rows, slopes })
}

#[derive(Clone, Debug, Serialize)]
pub struct EnergyRow {
    pub eps: f64,
    /// I at zero shift
    pub fine_energy: f64,
    /// Shift average of I
    pub averaged_energy: f64,
    /// -1/2 int f . v^(l) for l = 0..=K
    pub partial_energies: Vec<f64>,
    /// |I + 1/2 int f . v^(K)|
    pub partial_gap: f64,
    /// E_K at its minimiser
    pub truncated_energy: f64,
    /// E_K(v_K) - averaged I
    pub gap: f64,
    /// Smallest E_K(v) - E_K(v_K) over the random trials
    pub min_trial_excess: f64,
    pub ordering_holds: bool,
    /// L^2 distance between the shift-averaged macroscopic field and v_K
    pub averaged_field_error: f64,
    pub shift_norm_ratio: f64,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EnergyReport {
    pub order: usize,
    pub rows: Vec<EnergyRow>,
    pub gap_slope: SlopeFit,
    pub averaged_field_slope: SlopeFit,
    pub partial_gap_slope: SlopeFit,
}

/// Random divergence-free perturbation on the mode set of `like`, with L^2
/// norm `size`.
pub fn random_perturbation(like: &MacroField, size: f64, rng: &mut ChaCha8Rng) -> Result<MacroField> {
    let pots: Vec<([i64; 3], C3)> = like
        .modes
        .iter()
        .map(|(k, _)| (*k, [0; 3].map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))))
        .collect();
    let f = MacroField::curl_of(like.period, &pots)?;
    let n = f.l2_norm();
    Ok(if n > 0.0 { f.scale(size / n) } else { f })
}

/// Energies of the fine problem and of the truncated functional over an eps
/// sweep. `trials` random perturbations probe the minimality of v_K.
pub fn energy_suite(
    problem: &TorusProblem,
    profile: &LaminateProfile,
    kmax: usize,
    eps: &[f64],
    shifts: usize,
    trials: usize,
    seed: u64,
    opts: &LaminateOptions,
) -> Result<EnergyReport> {
    check_eps_list(problem.period, eps)?;
    let h = laminate_hierarchy(profile, kmax + 1)?;
    let tens = HomTensors::from_hierarchy(&h, Some(kmax))?;
    let medium = Stratified::Layers(profile.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &e in eps {
        let p = problem.with_eps(e)?;
        let ens = shift_ensemble(&p, &medium, &uniform_shifts(shifts.max(1)), opts)?;
        let fine = &ens.solutions[0];
        let cas = cascade(&p, &tens, kmax)?;
        let partial: Vec<f64> = (0..=kmax).map(|l| cas.truncated_sum(e, l).map(|v| work_energy(&p, &v))).collect::<Result<_>>()?;
        let el = solve_truncated_el(&p, &tens, kmax)?;
        let ek = el_energy(&p, &tens, kmax, &el.v)?;
        let scale = el.v.l2_norm();
        let mut min_excess = f64::INFINITY;
        for t in 0..trials {
            let size = scale * 10f64.powf(-3.0 + 3.0 * t as f64 / trials.max(1) as f64);
            let d = random_perturbation(&el.v, size, &mut rng)?;
            let trial = el.v.axpy(1.0, &d)?;
            min_excess = min_excess.min(el_energy(&p, &tens, kmax, &trial)? - ek);
        }
        let gap = ek - ens.energy;
        rows.push(EnergyRow {
            eps: e,
            fine_energy: fine.energy,
            averaged_energy: ens.energy,
            partial_gap: (fine.energy - partial[kmax]).abs(),
            partial_energies: partial,
            truncated_energy: ek,
            gap,
            min_trial_excess: min_excess,
            ordering_holds: min_excess >= 0.0 && gap >= 0.0,
            averaged_field_error: ens.average.axpy(-1.0, &el.v)?.l2_norm(),
            shift_norm_ratio: ens.norm_ratio(),
            warnings: el.warnings,
        });
    }
    let col = |f: fn(&EnergyRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    Ok(EnergyReport {
        order: kmax,
        gap_slope: fit_slope(eps, &col(|r| r.gap.abs()))?,
        averaged_field_slope: fit_slope(eps, &col(|r| r.averaged_field_error))?,
        partial_gap_slope: fit_slope(eps, &col(|r| r.partial_gap))?,
        rows,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayRow {
    pub eps: f64,
    pub integral: f64,
}

/// |int_T M(x/eps) g(x) dx| for each eps, by the trapezoidal rule on a
/// points^3 grid (exact for trigonometric polynomials of degree < points).
pub fn oscillation_decay(
    cell: &(dyn Fn([f64; 3]) -> f64 + Sync),
    g: &(dyn Fn([f64; 3]) -> f64 + Sync),
    period: f64,
    eps: &[f64],
    points: usize,
) -> Result<Vec<DecayRow>> {
    check_eps_list(period, eps)?;
    let h = period / points as f64;
    let w = h * h * h;
    eps.iter()
        .map(|&e| {
            let s: f64 = (0..points * points)
                .into_par_iter()
                .map(|jk| {
                    let (j, k) = (jk % points, jk / points);
                    let mut acc = 0.0;
                    for i in 0..points {
                        let x = [i as f64 * h, j as f64 * h, k as f64 * h];
                        acc += cell(x.map(|v| v / e)) * g(x);
                    }
                    acc
                })
                .collect::<Vec<f64>>()
                .iter()
                .sum();
            Ok(DecayRow { eps: e, integral: (s * w).abs() })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct PoincareRow {
    pub l2: f64,
    pub curl: f64,
    pub div: f64,
    /// ||v||^2 / (|T| (||curl v||^2 + ||div v||^2))
    pub ratio: f64,
    pub holds: bool,
    /// max over modes of the relative defect of |k|^2|c|^2 = |k x c|^2 + |k . c|^2
    pub identity_defect: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PoincareReport {
    pub rows: Vec<PoincareRow>,
    pub all_hold: bool,
    pub max_identity_defect: f64,
    /// Sharp constant (T / 2 pi)^2 of the bound on the torus of side T.
    pub sharp_constant: f64,
}

/// Checks the Poincare bound on band-limited zero-mean fields (not
/// necessarily divergence-free), evaluated mode by mode.
pub fn poincare_check(fields: &[MacroField]) -> PoincareReport {
    let mut rows = Vec::with_capacity(fields.len());
    let mut period = 1.0;
    for f in fields {
        period = f.period;
        let (mut l2, mut c2, mut d2, mut defect) = (0.0, 0.0, 0.0, 0.0f64);
        for (k, c) in &f.modes {
            let q = f.q(*k);
            let q2: f64 = q.iter().map(|v| v * v).sum();
            let cc: f64 = c.iter().map(|v| v.norm_sqr()).sum();
            let cross = [q[1] * c[2] - q[2] * c[1], q[2] * c[0] - q[0] * c[2], q[0] * c[1] - q[1] * c[0]];
            let x2: f64 = cross.iter().map(|v| v.norm_sqr()).sum();
            let dd = (q[0] * c[0] + q[1] * c[1] + q[2] * c[2]).norm_sqr();
            let lhs = q2 * cc;
            if lhs > 0.0 {
                defect = defect.max((lhs - x2 - dd).abs() / lhs);
            }
            l2 += cc;
            c2 += x2;
            d2 += dd;
        }
        let vol = f.volume();
        let (l2, c2, d2) = (2.0 * vol * l2, 2.0 * vol * c2, 2.0 * vol * d2);
        let rhs = vol * (c2 + d2);
        rows.push(PoincareRow {
            l2: l2.sqrt(),
            curl: c2.sqrt(),
            div: d2.sqrt(),
            ratio: if rhs > 0.0 { l2 / rhs } else { 0.0 },
            holds: l2 <= rhs * (1.0 + 1e-14),
            identity_defect: defect,
        });
    }
    PoincareReport {
        all_hold: rows.iter().all(|r| r.holds),
        max_identity_defect: rows.iter().map(|r| r.identity_defect).fold(0.0, f64::max),
        rows,
        sharp_constant: (period / (2.0 * PI)).powi(2),
    }
}

/// Random zero-mean field with modes |k_i| <= band.
pub fn random_band_limited(period: f64, band: i64, modes: usize, rng: &mut ChaCha8Rng) -> Result<MacroField> {
    let mut list: Vec<([i64; 3], C3)> = Vec::new();
    let mut tries = 0;
    while list.len() < modes && tries < 100 * modes {
        tries += 1;
        let k = [0; 3].map(|_| rng.gen_range(-band..=band));
        if k == [0, 0, 0] || list.iter().any(|(kk, _)| *kk == k || *kk == k.map(|v| -v)) {
            continue;
        }
        list.push((k, [0; 3].map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))));
    }
    MacroField::new(period, list)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source(t: f64) -> MacroField {
        MacroField::curl_of(t, &[([1, 1, 2], [C64::new(0.3, 0.0), C64::new(-0.2, 0.0), C64::new(0.5, 0.0)])]).unwrap()
    }

    #[test]
    fn homogeneous_laminate_solve_is_analytic() {
        let prof = LaminateProfile::two_layer(2.0, 2.0, 0.5).unwrap();
        let p = TorusProblem::new(1.0, 0.25, source(1.0)).unwrap();
        let s = laminate_direct_solve(&p, &Stratified::Layers(prof), 0.0, &LaminateOptions::default()).unwrap();
        let q = wavevector(1.0, [1, 1, 2]);
        let q2: f64 = q.iter().map(|v| v * v).sum();
        let u = s.amplitude([1, 1, 2]);
        let f = p.source.modes[0].1;
        for i in 0..3 {
            assert!((u[i] - f[i] / (2.0 * q2)).norm() < 1e-12);
        }
        assert!(s.residual() < 1e-10);
        assert!(s.max_divergence() < 1e-9);
    }

    #[test]
    fn zero_source_gives_zero_solution() {
        let p = TorusProblem::new(1.0, 0.5, MacroField::zero(1.0)).unwrap();
        let prof = LaminateProfile::two_layer(1.0, 2.0, 0.5).unwrap();
        let s = laminate_direct_solve(&p, &Stratified::Layers(prof), 0.0, &LaminateOptions::default()).unwrap();
        assert_eq!(s.l2_norm(), 0.0);
    }

    #[test]
    fn slope_fit_recovers_power_law() {
        let x = [0.5, 0.25, 0.125, 0.0625];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(2.5)).collect();
        let f = fit_slope(&x, &y).unwrap();
        assert!((f.slope - 2.5).abs() < 1e-12 && f.stderr < 1e-10);
        assert!(matches!(fit_slope(&x[..2], &y[..2]), Err(Error::TooFewSamples(2))));
    }

    #[test]
    fn grouping_pairs_conjugates() {
        let f = MacroField::new(1.0, vec![([-1, 0, 0], [c0(), C64::new(1.0, 0.0), c0()]), ([0, 3, 0], [C64::new(0.0, 1.0), c0(), c0()])]).unwrap();
        let g = groups_of(&f);
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].t, [0, 0]);
        assert_eq!(g[0].source.len(), 2);
        assert_eq!(g[1].t, [1, 0]);
    }
}
