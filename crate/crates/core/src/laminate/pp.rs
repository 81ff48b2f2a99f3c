//! Periodic piecewise polynomials on [0,1) in y_2.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Piecewise polynomial on the breakpoints 0 = t_0 < ... < t_m = 1, each
/// piece in the local coordinate t - t_i with coefficients low degree first.
#[derive(Clone, Debug, PartialEq)]
pub struct CellFn1D {
    breaks: Arc<Vec<f64>>,
    pieces: Vec<Vec<f64>>,
}

fn horner(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * t + a)
}

impl CellFn1D {
    pub fn new(breaks: Arc<Vec<f64>>, pieces: Vec<Vec<f64>>) -> Self {
        assert_eq!(breaks.len(), pieces.len() + 1, "one piece per interval");
        CellFn1D { breaks, pieces }
    }

    pub fn constant(breaks: Arc<Vec<f64>>, v: f64) -> Self {
        let m = breaks.len() - 1;
        CellFn1D { breaks, pieces: vec![vec![v]; m] }
    }

    pub fn piecewise_constant(breaks: Arc<Vec<f64>>, values: &[f64]) -> Self {
        CellFn1D::new(breaks, values.iter().map(|&v| vec![v]).collect())
    }

    pub fn breaks(&self) -> &Arc<Vec<f64>> {
        &self.breaks
    }

    pub fn pieces(&self) -> &[Vec<f64>] {
        &self.pieces
    }

    pub fn degree(&self) -> usize {
        self.pieces.iter().map(|p| p.len().saturating_sub(1)).max().unwrap_or(0)
    }

    fn widths(&self) -> impl Iterator<Item = f64> + '_ {
        self.breaks.windows(2).map(|w| w[1] - w[0])
    }

    fn zip_with(&self, other: &CellFn1D, f: impl Fn(f64, f64) -> f64) -> CellFn1D {
        debug_assert!(Arc::ptr_eq(&self.breaks, &other.breaks) || self.breaks == other.breaks);
        let pieces = self
            .pieces
            .iter()
            .zip(&other.pieces)
            .map(|(a, b)| {
                let n = a.len().max(b.len());
                (0..n)
                    .map(|i| f(a.get(i).copied().unwrap_or(0.0), b.get(i).copied().unwrap_or(0.0)))
                    .collect()
            })
            .collect();
        CellFn1D { breaks: self.breaks.clone(), pieces }
    }

    pub fn add(&self, other: &CellFn1D) -> CellFn1D {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &CellFn1D) -> CellFn1D {
        self.zip_with(other, |a, b| a - b)
    }

    /// self + s * other
    pub fn axpy(&self, s: f64, other: &CellFn1D) -> CellFn1D {
        self.zip_with(other, |a, b| a + s * b)
    }

    pub fn scale(&self, s: f64) -> CellFn1D {
        CellFn1D {
            breaks: self.breaks.clone(),
            pieces: self.pieces.iter().map(|p| p.iter().map(|v| v * s).collect()).collect(),
        }
    }

    pub fn add_const(&self, c: f64) -> CellFn1D {
        let mut out = self.clone();
        for p in &mut out.pieces {
            if p.is_empty() {
                p.push(0.0);
            }
            p[0] += c;
        }
        out
    }

    pub fn mul(&self, other: &CellFn1D) -> CellFn1D {
        let pieces = self
            .pieces
            .iter()
            .zip(&other.pieces)
            .map(|(a, b)| {
                if a.is_empty() || b.is_empty() {
                    return vec![0.0];
                }
                let mut c = vec![0.0; a.len() + b.len() - 1];
                for (i, x) in a.iter().enumerate() {
                    if *x == 0.0 {
                        continue;
                    }
                    for (j, y) in b.iter().enumerate() {
                        c[i + j] += x * y;
                    }
                }
                c
            })
            .collect();
        CellFn1D { breaks: self.breaks.clone(), pieces }
    }

    pub fn deriv(&self) -> CellFn1D {
        let pieces = self
            .pieces
            .iter()
            .map(|p| {
                if p.len() <= 1 {
                    vec![0.0]
                } else {
                    p.iter().enumerate().skip(1).map(|(i, v)| i as f64 * v).collect()
                }
            })
            .collect();
        CellFn1D { breaks: self.breaks.clone(), pieces }
    }

    /// Continuous antiderivative vanishing at 0, and its value at 1.
    pub fn antideriv(&self) -> (CellFn1D, f64) {
        let mut acc = 0.0;
        let mut pieces = Vec::with_capacity(self.pieces.len());
        for (p, w) in self.pieces.iter().zip(self.widths()) {
            let mut a = Vec::with_capacity(p.len() + 1);
            a.push(acc);
            a.extend(p.iter().enumerate().map(|(i, v)| v / (i + 1) as f64));
            acc = horner(&a, w);
            pieces.push(a);
        }
        (CellFn1D { breaks: self.breaks.clone(), pieces }, acc)
    }

    pub fn integral(&self) -> f64 {
        self.pieces
            .iter()
            .zip(self.widths())
            .map(|(p, w)| {
                let mut wp = w;
                let mut s = 0.0;
                for (i, v) in p.iter().enumerate() {
                    s += v * wp / (i + 1) as f64;
                    wp *= w;
                }
                s
            })
            .sum()
    }

    /// Cell average (the cell has unit length).
    pub fn mean(&self) -> f64 {
        self.integral()
    }

    /// Value at y (taken modulo 1); right-continuous at breakpoints.
    pub fn eval(&self, y: f64) -> f64 {
        let y = y.rem_euclid(1.0);
        let i = match self.breaks.binary_search_by(|b| b.partial_cmp(&y).unwrap()) {
            Ok(i) => i.min(self.pieces.len() - 1),
            Err(i) => i.saturating_sub(1).min(self.pieces.len() - 1),
        };
        horner(&self.pieces[i], y - self.breaks[i])
    }

    /// Largest absolute value sampled at 9 points per piece plus endpoints.
    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for (p, w) in self.pieces.iter().zip(self.widths()) {
            for s in 0..=8 {
                m = m.max(horner(p, w * s as f64 / 8.0).abs());
            }
        }
        m
    }

    /// Elementwise reciprocal of a piecewise-constant function.
    pub fn recip_piecewise_constant(&self) -> Result<CellFn1D> {
        let mut pieces = Vec::with_capacity(self.pieces.len());
        for p in &self.pieces {
            if p.iter().skip(1).any(|&v| v != 0.0) {
                return Err(Error::InvalidProfile("coefficient must be piecewise constant".into()));
            }
            if p[0] == 0.0 {
                return Err(Error::InvalidProfile("zero layer value".into()));
            }
            pieces.push(vec![1.0 / p[0]]);
        }
        Ok(CellFn1D { breaks: self.breaks.clone(), pieces })
    }

    /// Jump of the function across each interior breakpoint and across y = 0.
    pub fn max_jump(&self) -> f64 {
        let m = self.pieces.len();
        let widths: Vec<f64> = self.widths().collect();
        let mut j: f64 = 0.0;
        for i in 0..m {
            let end = horner(&self.pieces[i], widths[i]);
            let start = horner(&self.pieces[(i + 1) % m], 0.0);
            j = j.max((end - start).abs());
        }
        j
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn br() -> Arc<Vec<f64>> {
        Arc::new(vec![0.0, 0.3, 1.0])
    }

    #[test]
    fn calculus_on_pieces() {
        let f = CellFn1D::new(br(), vec![vec![1.0, 2.0], vec![0.0, 0.0, 3.0]]);
        // integral: piece 1 on width .3: t + t^2 -> .3 + .09; piece 2 width .7: t^3 -> .343
        assert!((f.integral() - (0.39 + 0.343)).abs() < 1e-15);
        let (a, tot) = f.antideriv();
        assert!((tot - f.integral()).abs() < 1e-15);
        assert!(a.max_jump() - tot.abs() < 1e-15);
        assert!((a.eval(0.3) - 0.39).abs() < 1e-15);
        assert!((f.deriv().eval(0.5) - 6.0 * 0.2).abs() < 1e-15);
        assert!((f.mul(&f).eval(0.1) - (1.2f64).powi(2)).abs() < 1e-14);
        assert!((f.eval(1.1) - f.eval(0.1)).abs() < 1e-15);
    }

    #[test]
    fn reciprocal_needs_constants() {
        let f = CellFn1D::piecewise_constant(br(), &[2.0, 4.0]);
        let r = f.recip_piecewise_constant().unwrap();
        assert_eq!(r.eval(0.5), 0.25);
        let g = CellFn1D::new(br(), vec![vec![1.0, 1.0], vec![1.0]]);
        assert!(g.recip_piecewise_constant().is_err());
    }
}
