//! One-dimensional spectral elements for a single transverse Fourier mode of
//! the augmented problem curl(alpha curl u) - grad div u = f on a layered
//! medium. Fields are u(x) = U(x_2) exp(i (q_1 x_1 + q_3 x_3)).
//!
//! Each element carries continuous Lagrange polynomials on Gauss-Lobatto
//! nodes and is integrated by Gauss-Legendre quadrature. Interior nodes are
//! eliminated element by element, leaving a dense cyclic system for the
//! element end points.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub type C3 = [C64; 3];

const I: C64 = C64 { re: 0.0, im: 1.0 };

fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    let dp = if (x * x - 1.0).abs() < 1e-300 { 0.0 } else { n * (x * p1 - p0) / (x * x - 1.0) };
    (p1, dp)
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_deriv(n, t);
            let dt = p / dp;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_deriv(n, t);
        x[n - 1 - i] = t;
        w[n - 1 - i] = 2.0 / ((1.0 - t * t) * dp * dp);
    }
    (x, w)
}

/// Gauss-Lobatto-Legendre nodes (degree p, p+1 nodes) on [-1, 1].
pub fn gll_nodes(p: usize) -> Vec<f64> {
    let mut x = vec![-1.0; p + 1];
    x[p] = 1.0;
    for i in 1..p {
        // roots of P_p' by Newton on (1 - x^2) P_p' whose derivative is -p(p+1) P_p
        let mut t = -(std::f64::consts::PI * i as f64 / p as f64).cos();
        for _ in 0..100 {
            let (pp, dpp) = legendre_with_deriv(p, t);
            let f = (1.0 - t * t) * dpp;
            let df = -(p as f64) * (p as f64 + 1.0) * pp;
            let dt = f / df;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        x[i] = t;
    }
    x
}

/// Values and derivatives of the Lagrange basis on `nodes` at points `xs`.
fn lagrange_tables(nodes: &[f64], xs: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = nodes.len();
    let mut v = DMatrix::zeros(xs.len(), n);
    let mut d = DMatrix::zeros(xs.len(), n);
    for j in 0..n {
        let den: f64 = (0..n).filter(|&m| m != j).map(|m| nodes[j] - nodes[m]).product();
        for (qi, &x) in xs.iter().enumerate() {
            let mut val = 1.0;
            for m in 0..n {
                if m != j {
                    val *= x - nodes[m];
                }
            }
            v[(qi, j)] = val / den;
            let mut s = 0.0;
            for a in 0..n {
                if a == j {
                    continue;
                }
                let mut prod = 1.0;
                for m in 0..n {
                    if m != j && m != a {
                        prod *= x - nodes[m];
                    }
                }
                s += prod;
            }
            d[(qi, j)] = s / den;
        }
    }
    (v, d)
}

/// Periodic mesh of [x_0, x_0 + T). The coefficient is stored at the
/// quadrature points of every element.
#[derive(Clone, Debug)]
pub struct SemMesh {
    pub edges: Vec<f64>,
    pub degree: usize,
    alpha_q: Vec<Vec<f64>>,
    xq: Vec<f64>,
    wq: Vec<f64>,
    lv: DMatrix<f64>,
    ld: DMatrix<f64>,
}

impl SemMesh {
    /// One constant coefficient value per element.
    pub fn new(edges: Vec<f64>, alpha: Vec<f64>, degree: usize) -> Result<Self> {
        if alpha.len() + 1 != edges.len() {
            return Err(Error::InvalidProblem("mesh needs one coefficient value per element".into()));
        }
        let mut m = SemMesh::with_coefficient(edges, |_| 1.0, degree)?;
        for (e, a) in alpha.iter().enumerate() {
            m.alpha_q[e].iter_mut().for_each(|v| *v = *a);
        }
        m.validate_alpha()?;
        Ok(m)
    }

    /// Coefficient given pointwise; it must be smooth inside every element.
    pub fn with_coefficient(edges: Vec<f64>, alpha: impl Fn(f64) -> f64, degree: usize) -> Result<Self> {
        if edges.len() < 3 {
            return Err(Error::InvalidProblem("mesh needs at least two elements".into()));
        }
        if degree < 2 {
            return Err(Error::InvalidProblem("element degree must be at least 2".into()));
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidProblem("mesh edges must increase".into()));
        }
        let nodes = gll_nodes(degree);
        let (xq, wq) = gauss_legendre(degree + 4);
        let (lv, ld) = lagrange_tables(&nodes, &xq);
        let mut m = SemMesh { edges, degree, alpha_q: Vec::new(), xq, wq, lv, ld };
        m.alpha_q = (0..m.edges.len() - 1).map(|e| m.element_quadrature(e).0.iter().map(|&x| alpha(x)).collect()).collect();
        m.validate_alpha()?;
        Ok(m)
    }

    fn validate_alpha(&self) -> Result<()> {
        if self.alpha_q.iter().flatten().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::InvalidProblem("coefficient must be finite and positive".into()));
        }
        Ok(())
    }

    pub fn elements(&self) -> usize {
        self.edges.len() - 1
    }

    /// Coefficient at the quadrature points of element e.
    pub fn alpha_at(&self, e: usize) -> &[f64] {
        &self.alpha_q[e]
    }

    pub fn period(&self) -> f64 {
        self.edges[self.edges.len() - 1] - self.edges[0]
    }

    /// Quadrature points, weights (with Jacobian) and the derivative scale.
    pub fn element_quadrature(&self, e: usize) -> (Vec<f64>, Vec<f64>, f64) {
        let (a, b) = (self.edges[e], self.edges[e + 1]);
        let jac = 0.5 * (b - a);
        let x = self.xq.iter().map(|t| a + (t + 1.0) * jac).collect();
        let w = self.wq.iter().map(|v| v * jac).collect();
        (x, w, 1.0 / jac)
    }

    /// Global node numbers of element e (the last wraps to node 0).
    fn element_nodes(&self, e: usize) -> Vec<usize> {
        let p = self.degree;
        let n = self.elements() * p;
        (0..=p).map(|k| (e * p + k) % n).collect()
    }
}

/// Nodal solution of one transverse mode.
#[derive(Clone, Debug)]
pub struct ModeSolution {
    pub q1: f64,
    pub q3: f64,
    /// Nodal values, node-major.
    pub nodal: Vec<C3>,
}

/// Values at quadrature points of one element.
pub struct ElementValues {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub u: Vec<C3>,
    /// d/dx_2 of U.
    pub du: Vec<C3>,
}

impl ElementValues {
    /// Full curl including the transverse phase.
    pub fn curl(&self, q1: f64, q3: f64) -> Vec<C3> {
        self.u
            .iter()
            .zip(&self.du)
            .map(|(u, d)| [d[2] - I * q3 * u[1], I * q3 * u[0] - I * q1 * u[2], I * q1 * u[1] - d[0]])
            .collect()
    }

    pub fn div(&self, q1: f64, q3: f64) -> Vec<C64> {
        self.u.iter().zip(&self.du).map(|(u, d)| I * q1 * u[0] + d[1] + I * q3 * u[2]).collect()
    }
}

impl ModeSolution {
    pub fn element_values(&self, mesh: &SemMesh, e: usize) -> ElementValues {
        let (x, w, dscale) = mesh.element_quadrature(e);
        let nodes = mesh.element_nodes(e);
        let nq = x.len();
        let mut u = vec![[C64::new(0.0, 0.0); 3]; nq];
        let mut du = vec![[C64::new(0.0, 0.0); 3]; nq];
        for (j, &g) in nodes.iter().enumerate() {
            let c = self.nodal[g];
            for qi in 0..nq {
                let (lv, ld) = (mesh.lv[(qi, j)], mesh.ld[(qi, j)] * dscale);
                for k in 0..3 {
                    u[qi][k] += c[k] * lv;
                    du[qi][k] += c[k] * ld;
                }
            }
        }
        ElementValues { x, w, u, du }
    }

    /// Value of U at an arbitrary point (wrapped into the mesh period).
    pub fn value_at(&self, mesh: &SemMesh, x: f64) -> C3 {
        let x0 = mesh.edges[0];
        let x = x0 + (x - x0).rem_euclid(mesh.period());
        let e = mesh.edges.partition_point(|v| *v <= x).clamp(1, mesh.elements()) - 1;
        let (a, b) = (mesh.edges[e], mesh.edges[e + 1]);
        let t = 2.0 * (x - a) / (b - a) - 1.0;
        let (lv, _) = lagrange_tables(&gll_nodes(mesh.degree), &[t]);
        let mut u = [C64::new(0.0, 0.0); 3];
        for (j, &g) in mesh.element_nodes(e).iter().enumerate() {
            for k in 0..3 {
                u[k] += self.nodal[g][k] * lv[(0, j)];
            }
        }
        u
    }

    /// Sum over elements of the quadrature of `f`.
    pub fn integrate<T: std::ops::AddAssign + Default>(&self, mesh: &SemMesh, mut f: impl FnMut(&ElementValues) -> T) -> T {
        let mut acc = T::default();
        for e in 0..mesh.elements() {
            acc += f(&self.element_values(mesh, e));
        }
        acc
    }
}

/// Solve one transverse mode: find U with
/// int alpha B(u).conj B(phi) + div u conj div phi = int f.conj phi + int g.conj B(phi)
/// for all test functions; `g` is optional (a source of the form curl g).
/// The transverse-constant mode is closed by a zero-mean constraint.
pub fn solve_mode(
    mesh: &SemMesh,
    q1: f64,
    q3: f64,
    f: &dyn Fn(f64) -> C3,
    g: Option<&dyn Fn(f64) -> C3>,
) -> Result<ModeSolution> {
    let p = mesh.degree;
    let ne = mesh.elements();
    let nb = p + 1;
    let nl = 3 * nb;
    let zero_mode = q1 == 0.0 && q3 == 0.0;
    let nglob = 3 * ne + if zero_mode { 3 } else { 0 };
    let mut big = DMatrix::<C64>::zeros(nglob, nglob);
    let mut rhs = DVector::<C64>::zeros(nglob);
    // local dof (comp c, node j) -> c * nb + j; boundary = nodes 0 and p
    let bdofs: Vec<usize> = (0..3).flat_map(|c| [c * nb, c * nb + p]).collect();
    let idofs: Vec<usize> = (0..3).flat_map(|c| (1..p).map(move |j| c * nb + j)).collect();
    let bglob = |e: usize, k: usize| -> usize {
        // k indexes bdofs: comp k/2, end k%2
        let node = (e + k % 2) % ne;
        3 * node + k / 2
    };
    struct Cond {
        kii_inv_kib: DMatrix<C64>,
        kii_inv_bi: DVector<C64>,
        kii_inv_mi: Option<DMatrix<C64>>,
    }
    let mut conds = Vec::with_capacity(ne);
    for e in 0..ne {
        let (x, w, dscale) = mesh.element_quadrature(e);
        let nq = x.len();
        let al = &mesh.alpha_q[e];
        let mut bm = [DMatrix::<C64>::zeros(nq, nl), DMatrix::<C64>::zeros(nq, nl), DMatrix::<C64>::zeros(nq, nl)];
        let mut dm = DMatrix::<C64>::zeros(nq, nl);
        for j in 0..nb {
            for qi in 0..nq {
                let lv = C64::new(mesh.lv[(qi, j)], 0.0);
                let ld = C64::new(mesh.ld[(qi, j)] * dscale, 0.0);
                bm[0][(qi, 2 * nb + j)] += ld;
                bm[0][(qi, nb + j)] += -I * q3 * lv;
                bm[1][(qi, j)] += I * q3 * lv;
                bm[1][(qi, 2 * nb + j)] += -I * q1 * lv;
                bm[2][(qi, nb + j)] += I * q1 * lv;
                bm[2][(qi, j)] += -ld;
                dm[(qi, j)] += I * q1 * lv;
                dm[(qi, nb + j)] += ld;
                dm[(qi, 2 * nb + j)] += I * q3 * lv;
            }
        }
        let mut kl = DMatrix::<C64>::zeros(nl, nl);
        for c in 0..3 {
            let mut wb = bm[c].clone();
            for qi in 0..nq {
                wb.row_mut(qi).scale_mut(al[qi] * w[qi]);
            }
            kl += bm[c].adjoint() * wb;
        }
        let mut wd = dm.clone();
        for qi in 0..nq {
            wd.row_mut(qi).scale_mut(w[qi]);
        }
        kl += dm.adjoint() * wd;
        let mut fl = DVector::<C64>::zeros(nl);
        let fv: Vec<C3> = x.iter().map(|&xx| f(xx)).collect();
        for c in 0..3 {
            for j in 0..nb {
                let mut s = C64::new(0.0, 0.0);
                for qi in 0..nq {
                    s += fv[qi][c] * (mesh.lv[(qi, j)] * w[qi]);
                }
                fl[c * nb + j] += s;
            }
        }
        if let Some(g) = g {
            let gv: Vec<C3> = x.iter().map(|&xx| g(xx)).collect();
            for c in 0..3 {
                let col = DVector::from_iterator(nq, (0..nq).map(|qi| gv[qi][c] * w[qi]));
                fl += bm[c].adjoint() * col;
            }
        }
        // mean functional per component
        let mut ml = DMatrix::<C64>::zeros(nl, 3);
        if zero_mode {
            for c in 0..3 {
                for j in 0..nb {
                    let s: f64 = (0..nq).map(|qi| mesh.lv[(qi, j)] * w[qi]).sum();
                    ml[(c * nb + j, c)] = C64::new(s, 0.0);
                }
            }
        }
        let kii = kl.select_rows(&idofs).select_columns(&idofs);
        let kib = kl.select_rows(&idofs).select_columns(&bdofs);
        let kbi = kl.select_rows(&bdofs).select_columns(&idofs);
        let kbb = kl.select_rows(&bdofs).select_columns(&bdofs);
        let fi = fl.select_rows(&idofs);
        let fb = fl.select_rows(&bdofs);
        let lu = kii.lu();
        let kii_inv_kib = lu.solve(&kib).ok_or_else(|| Error::Singular(format!("element {e} interior block")))?;
        let kii_inv_bi = lu.solve(&fi).ok_or_else(|| Error::Singular(format!("element {e} interior block")))?;
        let s = kbb - &kbi * &kii_inv_kib;
        let r = fb - &kbi * &kii_inv_bi;
        for a in 0..6 {
            let ga = bglob(e, a);
            rhs[ga] += r[a];
            for b in 0..6 {
                big[(ga, bglob(e, b))] += s[(a, b)];
            }
        }
        let kii_inv_mi = if zero_mode {
            let mi = ml.select_rows(&idofs);
            let mb = ml.select_rows(&bdofs);
            let kim = lu.solve(&mi).ok_or_else(|| Error::Singular(format!("element {e} interior block")))?;
            let coupling = &mb - &kbi * &kim; // boundary rows, multiplier columns
            let mrow = mb.adjoint() - mi.adjoint() * &kii_inv_kib; // multiplier rows, boundary columns
            let mm = mi.adjoint() * &kim;
            let mr = mi.adjoint() * &kii_inv_bi;
            let off = 3 * ne;
            for a in 0..6 {
                let ga = bglob(e, a);
                for c in 0..3 {
                    big[(ga, off + c)] += coupling[(a, c)];
                    big[(off + c, ga)] += mrow[(c, a)];
                }
            }
            for c in 0..3 {
                rhs[off + c] -= mr[c];
                for d in 0..3 {
                    big[(off + c, off + d)] -= mm[(c, d)];
                }
            }
            Some(kim)
        } else {
            None
        };
        conds.push(Cond { kii_inv_kib, kii_inv_bi, kii_inv_mi });
    }
    let sol = big.lu().solve(&rhs).ok_or_else(|| Error::Singular("condensed mode system".into()))?;
    let nnodes = ne * p;
    let mut nodal = vec![[C64::new(0.0, 0.0); 3]; nnodes];
    let lambda: Option<DVector<C64>> = zero_mode.then(|| sol.rows(3 * ne, 3).into_owned());
    for (e, cd) in conds.iter().enumerate() {
        let xb = DVector::from_iterator(6, (0..6).map(|a| sol[bglob(e, a)]));
        let mut xi = &cd.kii_inv_bi - &cd.kii_inv_kib * &xb;
        if let (Some(kim), Some(l)) = (&cd.kii_inv_mi, &lambda) {
            xi -= kim * l;
        }
        let nodes = mesh.element_nodes(e);
        for (k, &ld) in bdofs.iter().enumerate() {
            nodal[nodes[ld % nb]][ld / nb] = xb[k];
        }
        for (k, &ld) in idofs.iter().enumerate() {
            nodal[nodes[ld % nb]][ld / nb] = xi[k];
        }
    }
    Ok(ModeSolution { q1, q3, nodal })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn quadrature_rules() {
        let (x, w) = gauss_legendre(6);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert!((s - 2.0 / 11.0).abs() < 1e-14);
        let g = gll_nodes(4);
        // interior GLL nodes for degree 4: 0, +-sqrt(3/7)
        assert!((g[1] + (3.0f64 / 7.0).sqrt()).abs() < 1e-14 && g[2].abs() < 1e-14);
    }

    #[test]
    fn homogeneous_single_mode() {
        // alpha = 2, f = c e^{i q.x} with q.c = 0: u = f / (2 |q|^2)
        let t = 1.0;
        let edges: Vec<f64> = (0..=6).map(|i| i as f64 * t / 6.0).collect();
        let mesh = SemMesh::new(edges, vec![2.0; 6], 10).unwrap();
        let q = [2.0 * PI, 2.0 * PI, 0.0];
        let c = [C64::new(1.0, 0.0), C64::new(-1.0, 0.0), C64::new(0.5, 0.0)];
        let f = move |x: f64| c.map(|v| v * C64::from_polar(1.0, q[1] * x));
        let sol = solve_mode(&mesh, q[0], q[2], &f, None).unwrap();
        let q2: f64 = q.iter().map(|v| v * v).sum();
        let err = sol.integrate(&mesh, |ev| {
            let mut m: f64 = 0.0;
            for (x, u) in ev.x.iter().zip(&ev.u) {
                let ex = f(*x);
                for k in 0..3 {
                    m = m.max((u[k] - ex[k] / (2.0 * q2)).norm());
                }
            }
            MaxF(m)
        });
        assert!(err.0 < 1e-10, "{}", err.0);
    }

    #[test]
    fn transverse_constant_mode_has_zero_mean() {
        let edges: Vec<f64> = (0..=4).map(|i| i as f64 / 4.0).collect();
        let mesh = SemMesh::new(edges, vec![1.0, 3.0, 1.0, 3.0], 8).unwrap();
        let f = |x: f64| [C64::new((2.0 * PI * x).sin(), 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)];
        let sol = solve_mode(&mesh, 0.0, 0.0, &f, None).unwrap();
        let mean = sol.integrate(&mesh, |ev| ev.u.iter().zip(&ev.w).map(|(u, w)| u[0] * *w).sum::<C64>());
        assert!(mean.norm() < 1e-13);
        // flux alpha u_1' must be continuous: energy equals work
        let work = sol.integrate(&mesh, |ev| ev.u.iter().zip(&ev.x).zip(&ev.w).map(|((u, x), w)| f(*x)[0] * u[0].conj() * *w).sum::<C64>());
        let energy = sol.integrate(&mesh, |ev| {
            ev.du.iter().zip(&ev.w).zip(&ev.x).map(|((d, w), x)| d[0].norm_sqr() * w * if (x * 4.0).floor() as i64 % 2 == 0 { 1.0 } else { 3.0 }).sum::<f64>()
        });
        assert!((work.re - energy).abs() < 1e-12 * energy.max(1e-30));
    }

    #[derive(Default)]
    struct MaxF(f64);
    impl std::ops::AddAssign for MaxF {
        fn add_assign(&mut self, o: MaxF) {
            self.0 = self.0.max(o.0);
        }
    }
}
