//! Periodic tensor fields on the unit cell with spectral calculus.

use std::io::{Read, Write};
use std::sync::{Arc, OnceLock};

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::spectral::Grid3;
use crate::tensor::{eps3, multi_indices, ConstTensor, MAX_ORDER};

/// Order-r tensor field sampled on an n^3 grid of [0,1)^3. Components are
/// stored in row-major multi-index order, each as n^3 values with y_1 fastest.
#[derive(Clone, Debug)]
pub struct PeriodicField {
    order: usize,
    n: usize,
    comps: Vec<Vec<f64>>,
    spec: OnceLock<Arc<Vec<Vec<C64>>>>,
}

impl PartialEq for PeriodicField {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order && self.n == other.n && self.comps == other.comps
    }
}

fn ncomp(order: usize) -> usize {
    3usize.pow(order as u32)
}

impl PeriodicField {
    pub fn new(order: usize, n: usize, comps: Vec<Vec<f64>>) -> Result<Self> {
        if order > MAX_ORDER {
            return Err(Error::OrderOutOfRange { order, max: MAX_ORDER });
        }
        let grid = Grid3::unit(n)?;
        if comps.len() != ncomp(order) || comps.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::GridMismatch(format!("expected {} components of {} values", ncomp(order), grid.len())));
        }
        Ok(PeriodicField { order, n, comps, spec: OnceLock::new() })
    }

    pub fn zeros(order: usize, n: usize) -> Result<Self> {
        let len = n * n * n;
        Self::new(order, n, vec![vec![0.0; len]; ncomp(order)])
    }

    /// Sample `f(component multi-index, y)` at the grid points y = i / n.
    pub fn from_fn(order: usize, n: usize, f: impl Fn(&[usize], [f64; 3]) -> f64) -> Result<Self> {
        let grid = Grid3::unit(n)?;
        let comps = multi_indices(order)
            .map(|idx| {
                (0..grid.len())
                    .map(|p| {
                        let c = grid.coords(p);
                        f(&idx, [c[0] as f64 / n as f64, c[1] as f64 / n as f64, c[2] as f64 / n as f64])
                    })
                    .collect()
            })
            .collect();
        Self::new(order, n, comps)
    }

    pub fn from_spectral(order: usize, n: usize, spec: Vec<Vec<C64>>) -> Result<Self> {
        let grid = Grid3::unit(n)?;
        let comps = spec.iter().map(|s| grid.inverse_real(s)).collect();
        let f = Self::new(order, n, comps)?;
        let _ = f.spec.set(Arc::new(spec));
        Ok(f)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn grid_n(&self) -> usize {
        self.n
    }

    pub fn grid(&self) -> Arc<Grid3> {
        Grid3::unit(self.n).expect("validated at construction")
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.comps
    }

    /// Component at a zero-based multi-index.
    pub fn component(&self, idx: &[usize]) -> &[f64] {
        &self.comps[crate::tensor::flat_index(idx)]
    }

    /// Spectral coefficients (zero mode = mean), computed once.
    pub fn spectral(&self) -> Arc<Vec<Vec<C64>>> {
        self.spec
            .get_or_init(|| {
                let g = self.grid();
                Arc::new(self.comps.iter().map(|c| g.forward_real(c)).collect())
            })
            .clone()
    }

    /// Cell average per component.
    pub fn mean(&self) -> ConstTensor {
        let inv = 1.0 / self.comps[0].len() as f64;
        ConstTensor::from_entries(self.order, self.comps.iter().map(|c| c.iter().sum::<f64>() * inv).collect())
            .expect("finite")
    }

    pub fn l2_norm(&self) -> f64 {
        let inv = 1.0 / self.comps[0].len() as f64;
        (self.comps.iter().flat_map(|c| c.iter()).map(|v| v * v).sum::<f64>() * inv).sqrt()
    }

    pub fn spectral_l2_norm(&self) -> f64 {
        self.spectral().iter().flat_map(|c| c.iter()).map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flat_map(|c| c.iter()).fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sub(&self, other: &PeriodicField) -> Result<PeriodicField> {
        self.check_same(other)?;
        let comps = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        Self::new(self.order, self.n, comps)
    }

    fn check_same(&self, other: &PeriodicField) -> Result<()> {
        if self.order != other.order || self.n != other.n {
            return Err(Error::GridMismatch(format!(
                "order/grid ({}, {}) vs ({}, {})",
                self.order, self.n, other.order, other.n
            )));
        }
        Ok(())
    }

    fn map_spec(&self, order: usize, f: impl Fn(&Grid3, &[Vec<C64>], &[usize]) -> Vec<C64>) -> PeriodicField {
        let g = self.grid();
        let spec = self.spectral();
        let out: Vec<Vec<C64>> = multi_indices(order).map(|idx| f(&g, &spec, &idx)).collect();
        PeriodicField::from_spectral(order, self.n, out).expect("shape")
    }

    /// (curl F)_{i rest} = eps_{i s t} d_s F_{t rest}.
    pub fn curl_t(&self) -> Result<PeriodicField> {
        if self.order == 0 {
            return Err(Error::OrderMismatch { expected: 1, got: 0 });
        }
        Ok(self.map_spec(self.order, |g, spec, idx| {
            let mut acc = vec![C64::new(0.0, 0.0); g.len()];
            for s in 0..3 {
                for t in 0..3 {
                    let e = eps3(idx[0], s, t);
                    if e == 0.0 {
                        continue;
                    }
                    let mut src = idx.to_vec();
                    src[0] = t;
                    let d = g.deriv_spec(&spec[crate::tensor::flat_index(&src)], s);
                    for (a, v) in acc.iter_mut().zip(d) {
                        *a += v * e;
                    }
                }
            }
            acc
        }))
    }

    /// (div F)_{rest} = d_s F_{s rest}.
    pub fn div_t(&self) -> Result<PeriodicField> {
        if self.order == 0 {
            return Err(Error::OrderMismatch { expected: 1, got: 0 });
        }
        Ok(self.map_spec(self.order - 1, |g, spec, idx| {
            let mut acc = vec![C64::new(0.0, 0.0); g.len()];
            for s in 0..3 {
                let mut src = vec![s];
                src.extend_from_slice(idx);
                let d = g.deriv_spec(&spec[crate::tensor::flat_index(&src)], s);
                for (a, v) in acc.iter_mut().zip(d) {
                    *a += v;
                }
            }
            acc
        }))
    }

    /// (grad F)_{s rest} = d_s F_{rest}.
    pub fn grad_t(&self) -> Result<PeriodicField> {
        if self.order >= MAX_ORDER {
            return Err(Error::OrderOutOfRange { order: self.order + 1, max: MAX_ORDER });
        }
        Ok(self.map_spec(self.order + 1, |g, spec, idx| {
            g.deriv_spec(&spec[crate::tensor::flat_index(&idx[1..])], idx[0])
        }))
    }

    /// F(y + zeta) via the spectral phase factor.
    pub fn shift(&self, zeta: [f64; 3]) -> PeriodicField {
        self.map_spec(self.order, |g, spec, idx| {
            let s = &spec[crate::tensor::flat_index(idx)];
            s.iter()
                .enumerate()
                .map(|(f, &v)| {
                    let c = g.coords(f);
                    let ph: f64 = (0..3).map(|a| 2.0 * std::f64::consts::PI * g.freq(a, c[a]) as f64 * zeta[a]).sum();
                    if g.has_nyquist(f) {
                        // keep the field real: a Nyquist cosine only picks up cos(phase)
                        C64::new(v.re * ph.cos(), 0.0)
                    } else {
                        v * C64::from_polar(1.0, ph)
                    }
                })
                .collect()
        })
    }

    /// Per-mode projection c -> c - (k.c) k / |k|^2; zero mode kept.
    pub fn helmholtz_project(&self) -> Result<PeriodicField> {
        if self.order != 1 {
            return Err(Error::OrderMismatch { expected: 1, got: self.order });
        }
        let g = self.grid();
        let spec = self.spectral();
        let mut out: Vec<Vec<C64>> = spec.as_ref().clone();
        for f in 1..g.len() {
            let c = g.coords(f);
            // use the derivative symbol, so the Nyquist component along an
            // axis does not count towards the divergence
            let k: [f64; 3] = [0, 1, 2].map(|a| if g.is_nyquist(a, c[a]) { 0.0 } else { g.wavenumber(a, c[a]) });
            let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            if k2 == 0.0 {
                continue;
            }
            let kc = k[0] * spec[0][f] + k[1] * spec[1][f] + k[2] * spec[2][f];
            for a in 0..3 {
                out[a][f] -= kc * (k[a] / k2);
            }
        }
        PeriodicField::from_spectral(1, self.n, out)
    }

    /// Binary container: u64 order, u64 grid_n, then every component's
    /// physical values (component-major, y_1 fastest), all little-endian.
    pub fn write_binary(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&(self.order as u64).to_le_bytes())?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        for c in &self.comps {
            for v in c {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read) -> Result<PeriodicField> {
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let order = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        if order > MAX_ORDER {
            return Err(Error::OrderOutOfRange { order, max: MAX_ORDER });
        }
        Grid3::unit(n)?;
        let len = n * n * n;
        let mut comps = Vec::with_capacity(ncomp(order));
        for _ in 0..ncomp(order) {
            let mut c = Vec::with_capacity(len);
            for _ in 0..len {
                r.read_exact(&mut b8)?;
                c.push(f64::from_le_bytes(b8));
            }
            comps.push(c);
        }
        Self::new(order, n, comps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn wave(k: [f64; 3], c: [f64; 3]) -> PeriodicField {
        // Re(c e^{2 pi i k.y}) = c cos(2 pi k.y)
        PeriodicField::from_fn(1, 8, move |i, y| c[i[0]] * (2.0 * PI * (k[0] * y[0] + k[1] * y[1] + k[2] * y[2])).cos())
            .unwrap()
    }

    #[test]
    fn constant_fields_have_zero_derivatives() {
        let f = PeriodicField::from_fn(1, 8, |i, _| i[0] as f64 + 1.0).unwrap();
        assert!(f.curl_t().unwrap().max_abs() < 1e-14);
        assert!(f.div_t().unwrap().max_abs() < 1e-14);
        assert!(f.grad_t().unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn curl_of_plane_wave() {
        let k = [1.0, -2.0, 1.0];
        let c = [0.3, 0.5, -0.2];
        let f = wave(k, c);
        let cu = f.curl_t().unwrap();
        // d/dy of cos(2 pi k.y) = -2 pi k sin(2 pi k.y)
        let kc = [k[1] * c[2] - k[2] * c[1], k[2] * c[0] - k[0] * c[2], k[0] * c[1] - k[1] * c[0]];
        let expect = PeriodicField::from_fn(1, 8, |i, y| {
            -2.0 * PI * kc[i[0]] * (2.0 * PI * (k[0] * y[0] + k[1] * y[1] + k[2] * y[2])).sin()
        })
        .unwrap();
        assert!(cu.sub(&expect).unwrap().max_abs() < 1e-11);
        let dv = f.div_t().unwrap();
        let kdot = k[0] * c[0] + k[1] * c[1] + k[2] * c[2];
        let expect = PeriodicField::from_fn(0, 8, |_, y| {
            -2.0 * PI * kdot * (2.0 * PI * (k[0] * y[0] + k[1] * y[1] + k[2] * y[2])).sin()
        })
        .unwrap();
        assert!(dv.sub(&expect).unwrap().max_abs() < 1e-11);
    }

    #[test]
    fn grad_of_sine() {
        let f = PeriodicField::from_fn(0, 8, |_, y| (2.0 * PI * y[1]).sin()).unwrap();
        let g = f.grad_t().unwrap();
        let expect = PeriodicField::from_fn(1, 8, |i, y| if i[0] == 1 { 2.0 * PI * (2.0 * PI * y[1]).cos() } else { 0.0 }).unwrap();
        assert!(g.sub(&expect).unwrap().max_abs() < 1e-11);
        assert!(g.curl_t().unwrap().max_abs() < 1e-11);
    }

    #[test]
    fn shift_examples() {
        let f = PeriodicField::from_fn(0, 8, |_, y| (2.0 * PI * y[0]).cos()).unwrap();
        assert!(f.shift([0.0; 3]).sub(&f).unwrap().max_abs() < 1e-14);
        assert!(f.shift([1.0, 0.0, 0.0]).sub(&f).unwrap().max_abs() < 1e-12);
        let s = f.shift([0.25, 0.0, 0.0]);
        let expect = PeriodicField::from_fn(0, 8, |_, y| -(2.0 * PI * y[0]).sin()).unwrap();
        assert!(s.sub(&expect).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn helmholtz_removes_gradients() {
        let phi = PeriodicField::from_fn(0, 8, |_, y| (2.0 * PI * (y[0] + 2.0 * y[2])).sin() + (2.0 * PI * y[1]).cos()).unwrap();
        let g = phi.grad_t().unwrap();
        assert!(g.helmholtz_project().unwrap().max_abs() < 1e-12);
        let w = wave([1.0, 0.0, 0.0], [0.0, 1.0, 0.5]);
        assert!(w.helmholtz_project().unwrap().sub(&w).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn binary_round_trip() {
        let f = PeriodicField::from_fn(2, 4, |i, y| i[0] as f64 - y[1] + 0.5 * i[1] as f64).unwrap();
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 9 * 64 * 8);
        let back = PeriodicField::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(back, f);
    }
}
