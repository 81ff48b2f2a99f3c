//! 3D periodic grids, FFTs and the reference-medium curl-curl Krylov solver.
//!
//! Layout: flat index = i0 + n0 * (i1 + n1 * i2), so the first axis is fastest.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub struct Grid3 {
    pub dims: [usize; 3],
    pub lengths: [f64; 3],
    fwd: [Arc<dyn Fft<f64>>; 3],
    inv: [Arc<dyn Fft<f64>>; 3],
}

impl std::fmt::Debug for Grid3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid3").field("dims", &self.dims).field("lengths", &self.lengths).finish()
    }
}

impl Grid3 {
    pub fn new(dims: [usize; 3], lengths: [f64; 3]) -> Result<Self> {
        for &n in &dims {
            if n == 0 || (n > 1 && n % 2 != 0) {
                return Err(Error::BadGrid(n));
            }
        }
        let mut planner = FftPlanner::new();
        let fwd = dims.map(|n| planner.plan_fft_forward(n));
        let inv = dims.map(|n| planner.plan_fft_inverse(n));
        Ok(Grid3 { dims, lengths, fwd, inv })
    }

    /// Shared unit-cube grid with `n` points per axis.
    pub fn unit(n: usize) -> Result<Arc<Grid3>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Grid3>>>> = OnceLock::new();
        if n < 4 || n % 2 != 0 {
            return Err(Error::BadGrid(n));
        }
        let mut map = CACHE.get_or_init(|| Mutex::new(HashMap::new())).lock().unwrap();
        if let Some(g) = map.get(&n) {
            return Ok(g.clone());
        }
        let g = Arc::new(Grid3::new([n; 3], [1.0; 3])?);
        map.insert(n, g.clone());
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn volume(&self) -> f64 {
        self.lengths[0] * self.lengths[1] * self.lengths[2]
    }

    #[inline]
    pub fn index(&self, i: [usize; 3]) -> usize {
        i[0] + self.dims[0] * (i[1] + self.dims[1] * i[2])
    }

    #[inline]
    pub fn coords(&self, flat: usize) -> [usize; 3] {
        let i0 = flat % self.dims[0];
        let r = flat / self.dims[0];
        [i0, r % self.dims[1], r / self.dims[1]]
    }

    /// Signed integer frequency of grid index `i` along `axis`.
    #[inline]
    pub fn freq(&self, axis: usize, i: usize) -> i64 {
        let n = self.dims[axis];
        if i <= n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        }
    }

    #[inline]
    pub fn is_nyquist(&self, axis: usize, i: usize) -> bool {
        let n = self.dims[axis];
        n > 1 && i == n / 2
    }

    /// Physical wavenumber 2*pi*k/L along `axis`.
    #[inline]
    pub fn wavenumber(&self, axis: usize, i: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.freq(axis, i) as f64 / self.lengths[axis]
    }

    /// Wavevector at a flat index.
    #[inline]
    pub fn wavevector(&self, flat: usize) -> [f64; 3] {
        let c = self.coords(flat);
        [self.wavenumber(0, c[0]), self.wavenumber(1, c[1]), self.wavenumber(2, c[2])]
    }

    /// True if any axis sits on its Nyquist frequency.
    #[inline]
    pub fn has_nyquist(&self, flat: usize) -> bool {
        let c = self.coords(flat);
        (0..3).any(|a| self.is_nyquist(a, c[a]))
    }

    fn pass(&self, data: &mut [C64], plans: &[Arc<dyn Fft<f64>>; 3]) {
        let [n0, n1, n2] = self.dims;
        if n0 > 1 {
            for line in data.chunks_exact_mut(n0) {
                plans[0].process(line);
            }
        }
        let mut buf = Vec::new();
        if n1 > 1 {
            buf.resize(n1, C64::new(0.0, 0.0));
            for i2 in 0..n2 {
                for i0 in 0..n0 {
                    for (i1, b) in buf.iter_mut().enumerate() {
                        *b = data[i0 + n0 * (i1 + n1 * i2)];
                    }
                    plans[1].process(&mut buf);
                    for (i1, b) in buf.iter().enumerate() {
                        data[i0 + n0 * (i1 + n1 * i2)] = *b;
                    }
                }
            }
        }
        if n2 > 1 {
            buf.resize(n2, C64::new(0.0, 0.0));
            let plane = n0 * n1;
            for p in 0..plane {
                for (i2, b) in buf.iter_mut().enumerate() {
                    *b = data[p + plane * i2];
                }
                plans[2].process(&mut buf);
                for (i2, b) in buf.iter().enumerate() {
                    data[p + plane * i2] = *b;
                }
            }
        }
    }

    /// Forward transform normalised so that the zero mode is the mean.
    pub fn forward(&self, data: &mut [C64]) {
        assert_eq!(data.len(), self.len());
        self.pass(data, &self.fwd);
        let s = 1.0 / self.len() as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }

    /// Inverse of [`Grid3::forward`].
    pub fn inverse(&self, data: &mut [C64]) {
        assert_eq!(data.len(), self.len());
        self.pass(data, &self.inv);
    }

    pub fn forward_real(&self, data: &[f64]) -> Vec<C64> {
        let mut c: Vec<C64> = data.iter().map(|&x| C64::new(x, 0.0)).collect();
        self.forward(&mut c);
        c
    }

    pub fn inverse_real(&self, spec: &[C64]) -> Vec<f64> {
        let mut c = spec.to_vec();
        self.inverse(&mut c);
        c.into_iter().map(|v| v.re).collect()
    }

    /// Spectral first derivative along `axis`, Nyquist zeroed.
    pub fn deriv_spec(&self, spec: &[C64], axis: usize) -> Vec<C64> {
        spec.iter()
            .enumerate()
            .map(|(f, &v)| {
                let c = self.coords(f);
                if self.is_nyquist(axis, c[axis]) {
                    C64::new(0.0, 0.0)
                } else {
                    v * C64::new(0.0, self.wavenumber(axis, c[axis]))
                }
            })
            .collect()
    }
}

/// Coefficient field on a grid: scalar multiple of the identity or a full
/// symmetric matrix (xx, yy, zz, xy, xz, yz).
#[derive(Clone, Debug)]
pub enum CoefField {
    Scalar(Vec<f64>),
    Symmetric(Box<[Vec<f64>; 6]>),
}

impl CoefField {
    pub fn apply(&self, v: &[Vec<f64>; 3]) -> [Vec<f64>; 3] {
        match self {
            CoefField::Scalar(a) => {
                [0, 1, 2].map(|c| v[c].iter().zip(a).map(|(x, s)| x * s).collect())
            }
            CoefField::Symmetric(m) => {
                let n = v[0].len();
                let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
                for p in 0..n {
                    let (xx, yy, zz, xy, xz, yz) = (m[0][p], m[1][p], m[2][p], m[3][p], m[4][p], m[5][p]);
                    let (a, b, c) = (v[0][p], v[1][p], v[2][p]);
                    out[0][p] = xx * a + xy * b + xz * c;
                    out[1][p] = xy * a + yy * b + yz * c;
                    out[2][p] = xz * a + yz * b + zz * c;
                }
                out
            }
        }
    }

    /// Entry (i, j) at point p.
    pub fn entry(&self, i: usize, j: usize, p: usize) -> f64 {
        match self {
            CoefField::Scalar(a) => {
                if i == j {
                    a[p]
                } else {
                    0.0
                }
            }
            CoefField::Symmetric(m) => {
                let slot = match (i.min(j), i.max(j)) {
                    (0, 0) => 0,
                    (1, 1) => 1,
                    (2, 2) => 2,
                    (0, 1) => 3,
                    (0, 2) => 4,
                    _ => 5,
                };
                m[slot][p]
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            CoefField::Scalar(a) => a.len(),
            CoefField::Symmetric(m) => m[0].len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Smallest and largest pointwise eigenvalue.
    pub fn eigen_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        match self {
            CoefField::Scalar(a) => {
                for &x in a {
                    lo = lo.min(x);
                    hi = hi.max(x);
                }
            }
            CoefField::Symmetric(_) => {
                for p in 0..self.len() {
                    let m = nalgebra::Matrix3::from_fn(|i, j| self.entry(i, j, p));
                    let e = m.symmetric_eigenvalues();
                    lo = lo.min(e.min());
                    hi = hi.max(e.max());
                }
            }
        }
        (lo, hi)
    }
}

/// Outcome of a Krylov solve.
#[derive(Clone, Debug)]
pub struct KrylovLog {
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
}

/// Solves curl(A curl u) = b on the divergence-free, zero-mean subspace of a
/// periodic grid, preconditioned by the exact inverse of the operator with
/// the constant coefficient (lambda_min + lambda_max) / 2.
pub struct CurlCurlSolver {
    pub grid: Arc<Grid3>,
    pub coef: CoefField,
    pub alpha0: f64,
    pub tol: f64,
    pub max_iter: usize,
}

fn zero_c() -> C64 {
    C64::new(0.0, 0.0)
}

fn dot(a: &[Vec<C64>; 3], b: &[Vec<C64>; 3]) -> f64 {
    let mut s = 0.0;
    for c in 0..3 {
        for (x, y) in a[c].iter().zip(&b[c]) {
            s += x.re * y.re + x.im * y.im;
        }
    }
    s
}

impl CurlCurlSolver {
    pub fn new(grid: Arc<Grid3>, coef: CoefField) -> Result<Self> {
        if coef.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "coefficient has {} points, grid {}",
                coef.len(),
                grid.len()
            )));
        }
        let (lo, hi) = coef.eigen_bounds();
        if !(lo > 0.0) {
            return Err(Error::NotSpd(lo));
        }
        Ok(CurlCurlSolver { grid, coef, alpha0: 0.5 * (lo + hi), tol: 1e-10, max_iter: 500 })
    }

    /// Spectral curl with odd-derivative Nyquist modes zeroed.
    pub fn curl_spec(&self, u: &[Vec<C64>; 3]) -> [Vec<C64>; 3] {
        let g = &self.grid;
        let n = g.len();
        let mut out = [vec![zero_c(); n], vec![zero_c(); n], vec![zero_c(); n]];
        for f in 0..n {
            if g.has_nyquist(f) {
                continue;
            }
            let k = g.wavevector(f);
            let i = C64::new(0.0, 1.0);
            let (a, b, c) = (u[0][f], u[1][f], u[2][f]);
            out[0][f] = i * (k[1] * c - k[2] * b);
            out[1][f] = i * (k[2] * a - k[0] * c);
            out[2][f] = i * (k[0] * b - k[1] * a);
        }
        out
    }

    /// Keep only modes of the solution space: non-Nyquist, nonzero, and
    /// divergence-free.
    pub fn project(&self, u: &mut [Vec<C64>; 3]) {
        let g = &self.grid;
        for f in 0..g.len() {
            if f == 0 || g.has_nyquist(f) {
                for c in u.iter_mut() {
                    c[f] = zero_c();
                }
                continue;
            }
            let k = g.wavevector(f);
            let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            let before = u[0][f].norm_sqr() + u[1][f].norm_sqr() + u[2][f].norm_sqr();
            let kc = k[0] * u[0][f] + k[1] * u[1][f] + k[2] * u[2][f];
            for a in 0..3 {
                u[a][f] -= kc * (k[a] / k2);
            }
            // a purely longitudinal mode leaves a few ulps behind; drop them
            let after = u[0][f].norm_sqr() + u[1][f].norm_sqr() + u[2][f].norm_sqr();
            if after <= (16.0 * f64::EPSILON).powi(2) * before {
                for c in u.iter_mut() {
                    c[f] = zero_c();
                }
            }
        }
    }

    /// Spectral representation of curl G + H (G and H in physical space).
    pub fn rhs_from_flux(&self, gflux: Option<&[Vec<f64>; 3]>, h: Option<&[Vec<f64>; 3]>) -> [Vec<C64>; 3] {
        let g = &self.grid;
        let n = g.len();
        let mut out = [vec![zero_c(); n], vec![zero_c(); n], vec![zero_c(); n]];
        if let Some(gf) = gflux {
            let spec = [0, 1, 2].map(|c| g.forward_real(&gf[c]));
            let c = self.curl_spec(&spec);
            for a in 0..3 {
                out[a] = c[a].clone();
            }
        }
        if let Some(h) = h {
            for a in 0..3 {
                let s = g.forward_real(&h[a]);
                for (o, v) in out[a].iter_mut().zip(s) {
                    *o += v;
                }
            }
        }
        out
    }

    pub fn apply(&self, u: &[Vec<C64>; 3]) -> [Vec<C64>; 3] {
        let g = &self.grid;
        let c = self.curl_spec(u);
        let phys = c.map(|s| g.inverse_real(&s));
        let ac = self.coef.apply(&phys);
        let spec = ac.map(|v| g.forward_real(&v));
        let mut out = self.curl_spec(&spec);
        for a in 0..3 {
            out[a][0] = zero_c();
        }
        out
    }

    fn precondition(&self, r: &[Vec<C64>; 3]) -> [Vec<C64>; 3] {
        let g = &self.grid;
        let mut z = r.clone();
        for f in 0..g.len() {
            let k = g.wavevector(f);
            let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            for c in z.iter_mut() {
                c[f] = if f == 0 || g.has_nyquist(f) { zero_c() } else { c[f] / (self.alpha0 * k2) };
            }
        }
        z
    }

    /// Divergence and mean residuals of a spectral right-hand side, relative
    /// to its norm or to `scale` if larger. A right-hand side assembled from
    /// cancelling parts should pass the size of those parts as `scale`.
    pub fn solvability(&self, b: &[Vec<C64>; 3], scale: f64) -> (f64, f64) {
        let g = &self.grid;
        let norm = dot(b, b).sqrt().max(scale);
        if norm == 0.0 {
            return (0.0, 0.0);
        }
        let mean = (b[0][0].norm_sqr() + b[1][0].norm_sqr() + b[2][0].norm_sqr()).sqrt();
        let mut div2 = 0.0;
        for f in 1..g.len() {
            if g.has_nyquist(f) {
                continue;
            }
            let k = g.wavevector(f);
            let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            let kc = k[0] * b[0][f] + k[1] * b[1][f] + k[2] * b[2][f];
            div2 += kc.norm_sqr() / k2;
        }
        (div2.sqrt() / norm, mean / norm)
    }

    /// l2 norm of a spectral vector field.
    pub fn norm(&self, b: &[Vec<C64>; 3]) -> f64 {
        dot(b, b).sqrt()
    }

    /// Preconditioned conjugate gradients; `b` is projected onto the solution
    /// space first.
    pub fn solve(&self, b: &[Vec<C64>; 3]) -> Result<([Vec<C64>; 3], KrylovLog)> {
        let n = self.grid.len();
        // keep only the spectrum of a real field; round-off right-hand sides
        // can be purely anti-Hermitian and would otherwise break CG
        let g = &self.grid;
        let mut b = b.clone().map(|s| g.forward_real(&g.inverse_real(&s)));
        self.project(&mut b);
        let bnorm = dot(&b, &b).sqrt();
        let mut x = [vec![zero_c(); n], vec![zero_c(); n], vec![zero_c(); n]];
        if bnorm == 0.0 {
            return Ok((x, KrylovLog { iterations: 0, residual: 0.0, history: vec![0.0] }));
        }
        let mut r = b;
        let mut z = self.precondition(&r);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut history = vec![1.0];
        for it in 1..=self.max_iter {
            let ap = self.apply(&p);
            let pap = dot(&p, &ap);
            if !(pap.is_finite() && pap > 0.0) {
                // breakdown: p left the positive definite subspace
                break;
            }
            let alpha = rz / pap;
            for c in 0..3 {
                for f in 0..n {
                    x[c][f] += p[c][f] * alpha;
                    r[c][f] -= ap[c][f] * alpha;
                }
            }
            let rel = dot(&r, &r).sqrt() / bnorm;
            history.push(rel);
            if rel <= self.tol {
                self.project(&mut x);
                return Ok((x, KrylovLog { iterations: it, residual: rel, history }));
            }
            z = self.precondition(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for c in 0..3 {
                for f in 0..n {
                    p[c][f] = z[c][f] + p[c][f] * beta;
                }
            }
        }
        let residual = *history.last().unwrap();
        Err(Error::NoConvergence { iterations: history.len() - 1, residual, history })
    }
}
