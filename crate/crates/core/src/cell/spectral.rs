//! General coefficients on an n^3 grid, solved by preconditioned CG.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::CellMedium;
use crate::error::{Error, Result};
use crate::laminate::LaminateProfile;
use crate::spectral::{CoefField, CurlCurlSolver, Grid3};

/// Named smooth coefficients used by the CLI and tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmoothCoefficient {
    /// Laminate with raised-cosine interfaces spanning `cells` grid cells.
    SmoothedLaminate { values: Vec<f64>, widths: Vec<f64>, cells: f64 },
    /// Fully 3D anisotropic matrix coefficient without point symmetry.
    Anisotropic3d { amplitude: f64 },
    /// Scalar 1 + amplitude * sin(2 pi y_1) cos(2 pi y_2) + amplitude/2 * sin(2 pi y_3).
    Scalar3d { amplitude: f64 },
}

impl SmoothCoefficient {
    pub fn sample(&self, n: usize) -> Result<CoefField> {
        let grid = Grid3::unit(n)?;
        let pts = (0..grid.len()).map(|p| {
            let c = grid.coords(p);
            [c[0] as f64 / n as f64, c[1] as f64 / n as f64, c[2] as f64 / n as f64]
        });
        match self {
            SmoothCoefficient::SmoothedLaminate { values, widths, cells } => {
                let prof = LaminateProfile::from_widths(values, widths)?;
                let w = cells / n as f64;
                Ok(CoefField::Scalar(pts.map(|y| prof.smoothed_eval(y[1], w)).collect()))
            }
            SmoothCoefficient::Scalar3d { amplitude } => {
                if !(*amplitude >= 0.0 && *amplitude < 2.0 / 3.0) {
                    return Err(Error::InvalidProblem(format!("amplitude {amplitude} must lie in [0, 2/3)")));
                }
                let a = *amplitude;
                Ok(CoefField::Scalar(
                    pts.map(|y| 1.0 + a * (2.0 * PI * y[0]).sin() * (2.0 * PI * y[1]).cos() + 0.5 * a * (2.0 * PI * y[2]).sin())
                        .collect(),
                ))
            }
            SmoothCoefficient::Anisotropic3d { amplitude } => {
                if !(*amplitude >= 0.0 && *amplitude <= 1.0) {
                    return Err(Error::InvalidProblem(format!("amplitude {amplitude} must lie in [0, 1]")));
                }
                let a = *amplitude;
                let mut m: [Vec<f64>; 6] = Default::default();
                for y in pts {
                    let t = y.map(|v| 2.0 * PI * v);
                    m[0].push(2.0 + a * (0.5 * t[0].sin() + 0.3 * (t[1] + t[2]).cos()));
                    m[1].push(1.5 + a * 0.4 * t[0].cos() * t[1].sin());
                    m[2].push(1.8 + a * 0.3 * (t[2] + 1.0).sin());
                    m[3].push(a * 0.2 * (t[0] + t[1]).sin());
                    m[4].push(0.0);
                    m[5].push(a * 0.1 * t[2].cos());
                }
                Ok(CoefField::Symmetric(Box::new(m)))
            }
        }
    }
}

/// Cell functions stored as real samples on the unit grid.
pub struct SpectralMedium {
    grid: Arc<Grid3>,
    solver: CurlCurlSolver,
    tol: f64,
}

impl SpectralMedium {
    pub fn new(n: usize, coef: CoefField) -> Result<Self> {
        let grid = Grid3::unit(n)?;
        let solver = CurlCurlSolver::new(grid.clone(), coef)?;
        Ok(SpectralMedium { grid, solver, tol: 1e-7 })
    }

    pub fn from_smooth(n: usize, c: &SmoothCoefficient) -> Result<Self> {
        SpectralMedium::new(n, c.sample(n)?)
    }

    pub fn with_solver_tol(mut self, tol: f64, max_iter: usize) -> Self {
        self.solver.tol = tol;
        self.solver.max_iter = max_iter;
        self
    }

    pub fn grid(&self) -> &Arc<Grid3> {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.dims[0]
    }

    pub fn coef(&self) -> &CoefField {
        &self.solver.coef
    }
}

impl CellMedium for SpectralMedium {
    type Scalar = Vec<f64>;

    fn zero(&self) -> Vec<f64> {
        vec![0.0; self.grid.len()]
    }

    fn constant(&self, c: f64) -> Vec<f64> {
        vec![c; self.grid.len()]
    }

    fn lin(&self, a: f64, x: &Vec<f64>, b: f64, y: &Vec<f64>) -> Vec<f64> {
        x.iter().zip(y).map(|(p, q)| a * p + b * q).collect()
    }

    fn mul(&self, x: &Vec<f64>, y: &Vec<f64>) -> Vec<f64> {
        x.iter().zip(y).map(|(p, q)| p * q).collect()
    }

    fn deriv(&self, x: &Vec<f64>, axis: usize) -> Vec<f64> {
        if x.iter().all(|v| *v == 0.0) {
            return x.clone();
        }
        let g = &self.grid;
        g.inverse_real(&g.deriv_spec(&g.forward_real(x), axis))
    }

    fn mean(&self, x: &Vec<f64>) -> f64 {
        x.iter().sum::<f64>() / x.len() as f64
    }

    fn rms(&self, x: &Vec<f64>) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    fn apply_coef(&self, v: [&Vec<f64>; 3]) -> [Vec<f64>; 3] {
        self.solver.coef.apply(&[v[0].clone(), v[1].clone(), v[2].clone()])
    }

    fn solve_flux(&self, g: [&Vec<f64>; 3], h: [&Vec<f64>; 3]) -> Result<([Vec<f64>; 3], f64)> {
        let gg = [g[0].clone(), g[1].clone(), g[2].clone()];
        let hh = [h[0].clone(), h[1].clone(), h[2].clone()];
        let b = self.solver.rhs_from_flux(Some(&gg), Some(&hh));
        let sv = &self.solver;
        // cell right-hand sides scale with the coefficient; one that is round-off
        // throughout (a level that vanishes by symmetry) is judged against that
        let scale = sv
            .norm(&sv.rhs_from_flux(Some(&gg), None))
            .max(sv.norm(&sv.rhs_from_flux(None, Some(&hh))))
            .max(sv.alpha0);
        let (div, mean) = sv.solvability(&b, scale);
        if div.max(mean) > self.tol {
            return Err(Error::SolvabilityViolated { what: "cell right-hand side".into(), residual: div.max(mean), tol: self.tol });
        }
        let (u, log) = self.solver.solve(&b)?;
        Ok((u.map(|s| self.grid.inverse_real(&s)), log.residual))
    }

    fn solve_poisson(&self, g: &Vec<f64>) -> Result<Vec<f64>> {
        let grid = &self.grid;
        let mut s = grid.forward_real(g);
        for (f, v) in s.iter_mut().enumerate() {
            if f == 0 || grid.has_nyquist(f) {
                *v = C64::new(0.0, 0.0);
                continue;
            }
            let k = grid.wavevector(f);
            *v /= -(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]);
        }
        Ok(grid.inverse_real(&s))
    }

    fn sample_grid(&self, x: &Vec<f64>, p: usize) -> Result<Vec<f64>> {
        let n = self.n();
        if p == 0 || n % p != 0 {
            return Err(Error::GridMismatch(format!("cannot sample an {n}^3 field on {p}^3 points")));
        }
        let step = n / p;
        let mut out = Vec::with_capacity(p * p * p);
        for i2 in 0..p {
            for i1 in 0..p {
                for i0 in 0..p {
                    out.push(x[self.grid.index([i0 * step, i1 * step, i2 * step])]);
                }
            }
        }
        Ok(out)
    }

    fn coef_bounds(&self) -> (f64, f64) {
        self.solver.coef.eigen_bounds()
    }

    fn check_tol(&self) -> f64 {
        self.tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::CellHierarchy;

    #[test]
    fn constant_coefficient_has_no_correctors() {
        let m = SpectralMedium::new(8, CoefField::Scalar(vec![2.5; 512])).unwrap();
        let h = CellHierarchy::build(m, 2).unwrap();
        let h2 = h.hat_h(2).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 2.5 } else { 0.0 };
                assert!((h2.at(&[i, j]) - e).abs() < 1e-12);
            }
        }
        assert!(h.hat_h(3).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn poisson_inverts_laplacian() {
        let m = SpectralMedium::new(8, CoefField::Scalar(vec![1.0; 512])).unwrap();
        let g = m.grid().clone();
        let u: Vec<f64> = (0..g.len())
            .map(|p| {
                let c = g.coords(p);
                (2.0 * PI * c[0] as f64 / 8.0).sin() * (2.0 * PI * c[2] as f64 / 8.0).cos()
            })
            .collect();
        let lap: Vec<f64> = u.iter().map(|v| -8.0 * PI * PI * v).collect();
        let back = m.solve_poisson(&lap).unwrap();
        for (a, b) in u.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn coefficient_validation() {
        assert!(SmoothCoefficient::Scalar3d { amplitude: 0.9 }.sample(8).is_err());
        let c = SmoothCoefficient::Anisotropic3d { amplitude: 1.0 }.sample(8).unwrap();
        assert!(c.eigen_bounds().0 > 0.5);
    }
}
