//! Exact backend for A = alpha(y_2) I. Cell functions depend on y_2 only, so
//! derivatives along y_1 and y_3 vanish and the vector problem decouples into
//! two scalar flux ODEs.
//!
//! `deriv` differentiates piecewise and drops the point masses at jumps. The
//! recurrences only differentiate continuous functions (correctors and K
//! tensors), so this is exact where it is used.

use std::sync::Arc;

use super::CellMedium;
use crate::error::{Error, Result};
use crate::laminate::{solve_flux, solve_second_antiderivative, CellFn1D, LaminateProfile};

#[derive(Clone, Debug)]
pub struct LayeredMedium {
    profile: LaminateProfile,
    breaks: Arc<Vec<f64>>,
    alpha: CellFn1D,
}

impl LayeredMedium {
    pub fn new(profile: &LaminateProfile) -> Self {
        let alpha = profile.alpha();
        LayeredMedium { profile: profile.clone(), breaks: alpha.breaks().clone(), alpha }
    }

    pub fn profile(&self) -> &LaminateProfile {
        &self.profile
    }

    pub fn alpha(&self) -> &CellFn1D {
        &self.alpha
    }
}

impl CellMedium for LayeredMedium {
    type Scalar = CellFn1D;

    fn zero(&self) -> CellFn1D {
        CellFn1D::constant(self.breaks.clone(), 0.0)
    }

    fn constant(&self, c: f64) -> CellFn1D {
        CellFn1D::constant(self.breaks.clone(), c)
    }

    fn lin(&self, a: f64, x: &CellFn1D, b: f64, y: &CellFn1D) -> CellFn1D {
        if b == 0.0 {
            return x.scale(a);
        }
        if a == 1.0 {
            return x.axpy(b, y);
        }
        x.scale(a).axpy(b, y)
    }

    fn mul(&self, x: &CellFn1D, y: &CellFn1D) -> CellFn1D {
        x.mul(y)
    }

    fn deriv(&self, x: &CellFn1D, axis: usize) -> CellFn1D {
        if axis == 1 {
            x.deriv()
        } else {
            self.zero()
        }
    }

    fn mean(&self, x: &CellFn1D) -> f64 {
        x.mean()
    }

    fn rms(&self, x: &CellFn1D) -> f64 {
        x.mul(x).mean().max(0.0).sqrt()
    }

    fn apply_coef(&self, v: [&CellFn1D; 3]) -> [CellFn1D; 3] {
        v.map(|c| self.alpha.mul(c))
    }

    fn solve_flux(&self, g: [&CellFn1D; 3], h: [&CellFn1D; 3]) -> Result<([CellFn1D; 3], f64)> {
        let scale = 1.0 + g.iter().chain(h.iter()).map(|f| f.max_abs()).fold(0.0, f64::max);
        let h2 = h[1].max_abs();
        if h2 > self.check_tol() * scale {
            return Err(Error::SolvabilityViolated { what: "y_2 component of the source".into(), residual: h2, tol: self.check_tol() * scale });
        }
        let u1 = solve_flux(&self.alpha, g[2], h[0])?;
        let u3 = solve_flux(&self.alpha, &g[0].scale(-1.0), h[2])?;
        let res = (h2 + h[0].mean().abs() + h[2].mean().abs()) / scale;
        Ok(([u1, self.zero(), u3], res))
    }

    fn solve_poisson(&self, g: &CellFn1D) -> Result<CellFn1D> {
        solve_second_antiderivative(g)
    }

    fn sample_grid(&self, x: &CellFn1D, p: usize) -> Result<Vec<f64>> {
        if p == 0 {
            return Err(Error::BadGrid(p));
        }
        let line: Vec<f64> = (0..p).map(|i| x.eval(i as f64 / p as f64)).collect();
        let mut out = Vec::with_capacity(p * p * p);
        for _i2 in 0..p {
            for i1 in 0..p {
                for _i0 in 0..p {
                    out.push(line[i1]);
                }
            }
        }
        Ok(out)
    }

    fn coef_bounds(&self) -> (f64, f64) {
        let v = self.profile.values();
        (v.iter().cloned().fold(f64::INFINITY, f64::min), v.iter().cloned().fold(0.0, f64::max))
    }

    fn check_tol(&self) -> f64 {
        1e-10
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::CellHierarchy;

    #[test]
    fn first_corrector_antisymmetric_pattern() {
        let p = LaminateProfile::two_layer(1.0, 2.0, 0.5).unwrap();
        let h = CellHierarchy::build(LayeredMedium::new(&p), 1).unwrap();
        let n1 = &h.level(1).unwrap().n;
        let n = crate::laminate::first_order(&p).unwrap();
        for y in [0.1, 0.4, 0.6, 0.95] {
            assert!((n1.at(&[0, 2]).eval(y) + n.eval(y)).abs() < 1e-14);
            assert!((n1.at(&[2, 0]).eval(y) - n.eval(y)).abs() < 1e-14);
        }
        for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1), (1, 2), (2, 1), (2, 2)] {
            assert!(n1.at(&[i, j]).max_abs() < 1e-14);
        }
        let h2 = h.hat_h(2).unwrap();
        assert!((h2.get(&[1, 1]) - 4.0 / 3.0).abs() < 1e-14);
        assert!((h2.get(&[2, 2]) - 1.5).abs() < 1e-14);
        assert!((h2.get(&[3, 3]) - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn grid_sampling_depends_on_second_axis() {
        let p = LaminateProfile::two_layer(1.0, 2.0, 0.5).unwrap();
        let m = LayeredMedium::new(&p);
        let s = m.sample_grid(m.alpha(), 4).unwrap();
        // index = i0 + 4 i1 + 16 i2
        assert_eq!(s[0], 1.0);
        assert_eq!(s[4 * 2], 2.0);
        assert_eq!(s[3 + 16 * 3], 1.0);
    }
}
