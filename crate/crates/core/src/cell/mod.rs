//! Periodic curl-curl cell problems and the corrector recurrences.
//!
//! The recurrences are written once against [`CellMedium`], which abstracts
//! how scalar cell functions are stored, differentiated and solved for. Two
//! backends exist: [`spectral::SpectralMedium`] (general A on an n^3 grid)
//! and [`layered::LayeredMedium`] (exact piecewise polynomials for A = a(y_2) I).
//!
//! Index conventions for a corrector-type tensor field X of order r: the
//! first index is the vector index the cell operator acts on, the last index
//! pairs with a component of the macroscopic field, and the indices between
//! are derivative indices.

pub mod layered;
pub mod spectral;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{
    eps3, flat_index, multi_indices, permutations, symmetrize, tilde_tilde, ConstTensor, MAX_ORDER,
};

/// Storage and solvers for scalar functions on the unit cell.
pub trait CellMedium: Sync + Send {
    type Scalar: Clone + Send + Sync + std::fmt::Debug;

    fn zero(&self) -> Self::Scalar;
    fn constant(&self, c: f64) -> Self::Scalar;
    /// a x + b y
    fn lin(&self, a: f64, x: &Self::Scalar, b: f64, y: &Self::Scalar) -> Self::Scalar;
    fn mul(&self, x: &Self::Scalar, y: &Self::Scalar) -> Self::Scalar;
    fn deriv(&self, x: &Self::Scalar, axis: usize) -> Self::Scalar;
    fn mean(&self, x: &Self::Scalar) -> f64;
    /// Root mean square over the cell.
    fn rms(&self, x: &Self::Scalar) -> f64;
    /// Pointwise (A v)_i = A_is v_s.
    fn apply_coef(&self, v: [&Self::Scalar; 3]) -> [Self::Scalar; 3];
    /// Solve curl(A curl u) = curl g + h for a divergence-free, zero-mean u.
    /// Returns the solution and a relative residual.
    fn solve_flux(&self, g: [&Self::Scalar; 3], h: [&Self::Scalar; 3]) -> Result<([Self::Scalar; 3], f64)>;
    /// Zero-mean solution of the Laplace equation with right-hand side g.
    fn solve_poisson(&self, g: &Self::Scalar) -> Result<Self::Scalar>;
    /// Values at y = i / p on a p^3 grid (first axis fastest).
    fn sample_grid(&self, x: &Self::Scalar, p: usize) -> Result<Vec<f64>>;
    /// Pointwise ellipticity bounds of A.
    fn coef_bounds(&self) -> (f64, f64);
    /// Tolerance used for solvability and cross-formula checks.
    fn check_tol(&self) -> f64;
}

/// Tensor of scalar cell functions, row-major over its multi-index.
#[derive(Clone, Debug)]
pub struct TensorField<S> {
    pub order: usize,
    pub comps: Vec<S>,
}

impl<S: Clone> TensorField<S> {
    pub fn from_fn(order: usize, f: impl FnMut(&[usize]) -> S) -> Self {
        let mut f = f;
        TensorField { order, comps: multi_indices(order).map(|i| f(&i)).collect() }
    }

    #[inline]
    pub fn at(&self, idx: &[usize]) -> &S {
        &self.comps[flat_index(idx)]
    }
}

pub fn tf_zero<M: CellMedium>(m: &M, order: usize) -> TensorField<M::Scalar> {
    TensorField::from_fn(order, |_| m.zero())
}

/// (curl X)_{i rest} = eps_{i s t} d_s X_{t rest}.
pub fn tf_curl<M: CellMedium>(m: &M, x: &TensorField<M::Scalar>) -> TensorField<M::Scalar> {
    TensorField::from_fn(x.order, |idx| {
        let mut acc = m.zero();
        let mut src = idx.to_vec();
        for s in 0..3 {
            for t in 0..3 {
                let e = eps3(idx[0], s, t);
                if e == 0.0 {
                    continue;
                }
                src[0] = t;
                acc = m.lin(1.0, &acc, e, &m.deriv(x.at(&src), s));
            }
        }
        acc
    })
}

/// (div X)_{rest} = d_s X_{s rest}.
pub fn tf_div<M: CellMedium>(m: &M, x: &TensorField<M::Scalar>) -> TensorField<M::Scalar> {
    TensorField::from_fn(x.order - 1, |idx| {
        let mut acc = m.zero();
        for s in 0..3 {
            let mut src = vec![s];
            src.extend_from_slice(idx);
            acc = m.lin(1.0, &acc, 1.0, &m.deriv(x.at(&src), s));
        }
        acc
    })
}

/// out_{i1 i2 rest} = eps_{i1 i2 s} X_{s rest}.
pub fn tf_shuffle_m<M: CellMedium>(m: &M, x: &TensorField<M::Scalar>) -> TensorField<M::Scalar> {
    TensorField::from_fn(x.order + 1, |idx| {
        let mut acc = m.zero();
        for s in 0..3 {
            let e = eps3(idx[0], idx[1], s);
            if e == 0.0 {
                continue;
            }
            let mut src = vec![s];
            src.extend_from_slice(&idx[2..]);
            acc = m.lin(1.0, &acc, e, x.at(&src));
        }
        acc
    })
}

/// (A X)_{i rest} = A_is X_{s rest}.
pub fn tf_apply_coef<M: CellMedium>(m: &M, x: &TensorField<M::Scalar>) -> TensorField<M::Scalar> {
    let r = x.order;
    let mut out = tf_zero(m, r);
    for rest in multi_indices(r - 1) {
        let col = |s: usize| {
            let mut i = vec![s];
            i.extend_from_slice(&rest);
            x.at(&i)
        };
        let v = m.apply_coef([col(0), col(1), col(2)]);
        for (s, val) in v.into_iter().enumerate() {
            let mut i = vec![s];
            i.extend_from_slice(&rest);
            out.comps[flat_index(&i)] = val;
        }
    }
    out
}

pub fn tf_add<M: CellMedium>(m: &M, a: f64, x: &TensorField<M::Scalar>, b: f64, y: &TensorField<M::Scalar>) -> TensorField<M::Scalar> {
    assert_eq!(x.order, y.order);
    TensorField { order: x.order, comps: x.comps.iter().zip(&y.comps).map(|(p, q)| m.lin(a, p, b, q)).collect() }
}

pub fn tf_mean<M: CellMedium>(m: &M, x: &TensorField<M::Scalar>) -> ConstTensor {
    ConstTensor::from_entries(x.order, x.comps.iter().map(|c| m.mean(c)).collect()).expect("finite means")
}

pub fn tf_rms<M: CellMedium>(m: &M, x: &TensorField<M::Scalar>) -> f64 {
    x.comps.iter().map(|c| m.rms(c).powi(2)).sum::<f64>().sqrt()
}

/// Average over permutations of the middle indices (first and last fixed).
pub fn tf_sym_middle<M: CellMedium>(m: &M, x: &TensorField<M::Scalar>) -> TensorField<M::Scalar> {
    if x.order < 4 {
        return x.clone();
    }
    let perms = permutations(x.order - 2);
    let w = 1.0 / perms.len() as f64;
    TensorField::from_fn(x.order, |idx| {
        let mut acc = m.zero();
        let mut src = idx.to_vec();
        for p in &perms {
            for (slot, &pk) in p.iter().enumerate() {
                src[1 + slot] = idx[1 + pk];
            }
            acc = m.lin(1.0, &acc, w, x.at(&src));
        }
        acc
    })
}

/// Average over permutations of the leading `k` indices.
pub fn tf_sym_leading<M: CellMedium>(m: &M, x: &TensorField<M::Scalar>, k: usize) -> TensorField<M::Scalar> {
    if k < 2 {
        return x.clone();
    }
    let perms = permutations(k);
    let w = 1.0 / perms.len() as f64;
    TensorField::from_fn(x.order, |idx| {
        let mut acc = m.zero();
        let mut src = idx.to_vec();
        for p in &perms {
            for (slot, &pk) in p.iter().enumerate() {
                src[slot] = idx[pk];
            }
            acc = m.lin(1.0, &acc, w, x.at(&src));
        }
        acc
    })
}

/// Sorted-middle canonical form of a trailing index tuple (d_1..d_n, m).
fn canonical_rest(rest: &[usize]) -> Vec<usize> {
    let mut c = rest.to_vec();
    let n = c.len();
    if n > 1 {
        c[..n - 1].sort_unstable();
    }
    c
}

/// Solve curl(A curl N) = curl G + H columnwise: each trailing multi-index is
/// an independent vector problem. When `symmetric_middle` is set, G and H
/// must be symmetric in their middle indices and only canonical columns are
/// solved. Returns the solution and the worst column residual.
pub fn solve_columns<M: CellMedium>(
    m: &M,
    g: Option<&TensorField<M::Scalar>>,
    h: Option<&TensorField<M::Scalar>>,
    symmetric_middle: bool,
) -> Result<(TensorField<M::Scalar>, f64)> {
    let order = g.or(h).map(|t| t.order).expect("g or h");
    let zero = m.zero();
    let rests: Vec<Vec<usize>> = multi_indices(order - 1).collect();
    let canon: Vec<Vec<usize>> = {
        let mut c: Vec<Vec<usize>> =
            rests.iter().map(|r| if symmetric_middle { canonical_rest(r) } else { r.clone() }).collect();
        c.sort();
        c.dedup();
        c
    };
    let solved: Vec<Result<([M::Scalar; 3], f64)>> = canon
        .par_iter()
        .map(|rest| {
            fn pick<'a, S>(t: Option<&'a TensorField<S>>, s: usize, rest: &[usize], zero: &'a S) -> &'a S {
                match t {
                    Some(t) => {
                        let mut i = vec![s];
                        i.extend_from_slice(rest);
                        &t.comps[flat_index(&i)]
                    }
                    None => zero,
                }
            }
            let pick = |t, s| pick(t, s, rest, &zero);
            m.solve_flux([pick(g, 0), pick(g, 1), pick(g, 2)], [pick(h, 0), pick(h, 1), pick(h, 2)])
        })
        .collect();
    let mut table: BTreeMap<Vec<usize>, [M::Scalar; 3]> = BTreeMap::new();
    let mut worst: f64 = 0.0;
    for (rest, r) in canon.into_iter().zip(solved) {
        let (u, res) = r?;
        worst = worst.max(res);
        table.insert(rest, u);
    }
    let mut out = tf_zero(m, order);
    for rest in rests {
        let key = if symmetric_middle { canonical_rest(&rest) } else { rest.clone() };
        let u = &table[&key];
        for s in 0..3 {
            let mut i = vec![s];
            i.extend_from_slice(&rest);
            out.comps[flat_index(&i)] = u[s].clone();
        }
    }
    Ok((out, worst))
}

/// Solve curl(A curl N) = F columnwise for a right-hand side given directly.
pub fn solve_curl_curl<M: CellMedium>(m: &M, f: &TensorField<M::Scalar>) -> Result<TensorField<M::Scalar>> {
    if f.order == 0 {
        return Err(Error::OrderMismatch { expected: 1, got: 0 });
    }
    Ok(solve_columns(m, None, Some(f), false)?.0)
}

/// First corrector: curl(A curl N) = -curl A, solved in flux form.
pub fn corrector_first<M: CellMedium>(m: &M) -> Result<(TensorField<M::Scalar>, f64)> {
    let id = TensorField::from_fn(2, |i| m.constant(if i[0] == i[1] { 1.0 } else { 0.0 }));
    let a = tf_apply_coef(m, &id);
    let neg_a = tf_add(m, -1.0, &a, 0.0, &a);
    solve_columns(m, Some(&neg_a), None, false)
}

/// <A (curl N1 + I)>, checked symmetric positive definite.
pub fn hom_h2<M: CellMedium>(m: &M, n1: &TensorField<M::Scalar>) -> Result<ConstTensor> {
    let id = TensorField::from_fn(2, |i| m.constant(if i[0] == i[1] { 1.0 } else { 0.0 }));
    let z = tf_add(m, 1.0, &tf_curl(m, n1), 1.0, &id);
    let h = tf_mean(m, &tf_apply_coef(m, &z));
    check_spd(&h, m.check_tol())?;
    Ok(h)
}

/// Symmetric form <A Z Z> of the classical homogenised matrix.
pub fn hom_h2_symmetric<M: CellMedium>(m: &M, n1: &TensorField<M::Scalar>) -> ConstTensor {
    let id = TensorField::from_fn(2, |i| m.constant(if i[0] == i[1] { 1.0 } else { 0.0 }));
    let z = tf_add(m, 1.0, &tf_curl(m, n1), 1.0, &id);
    let az = tf_apply_coef(m, &z);
    ConstTensor::from_fn(2, |i| (0..3).map(|s| m.mean(&m.mul(az.at(&[s, i[0]]), z.at(&[s, i[1]])))).sum()).unwrap()
}

pub fn check_spd(h: &ConstTensor, tol: f64) -> Result<()> {
    let mat = nalgebra::Matrix3::from_fn(|i, j| h.at(&[i, j]));
    let asym = (mat - mat.transpose()).abs().max();
    let scale = mat.abs().max().max(1.0);
    let e = nalgebra::Matrix3::from_fn(|i, j| 0.5 * (mat[(i, j)] + mat[(j, i)])).symmetric_eigenvalues();
    if asym > tol.sqrt() * scale || e.min() <= 0.0 {
        return Err(Error::NotSpd(e.min()));
    }
    Ok(())
}

/// One corrector level j >= 1.
#[derive(Clone, Debug)]
pub struct Level<S> {
    /// N^(j), order j+1.
    pub n: TensorField<S>,
    /// M^(j) (identity for j = 1).
    pub m: TensorField<S>,
    /// L^(j) as the literal index contraction (zero for j = 1).
    pub l: TensorField<S>,
    /// curl N^(j) + M^(j).
    pub z: TensorField<S>,
    /// A Z^(j).
    pub az: TensorField<S>,
    /// <L^(j)>.
    pub h: ConstTensor,
    /// hat h^(j+1) = <A Z^(j)>.
    pub hat_h: ConstTensor,
    /// Worst relative residual of the column solves.
    pub residual: f64,
}

/// Corrector hierarchy N^(1..J) with coefficient tensors.
pub struct CellHierarchy<M: CellMedium> {
    pub medium: M,
    levels: Vec<Level<M::Scalar>>,
    /// K^(1), K^(2), ... (K^(1) = 0), each stored symmetrised over its
    /// derivative indices.
    k: Vec<TensorField<M::Scalar>>,
}

impl<M: CellMedium> CellHierarchy<M> {
    /// Level 1: first corrector and the classical homogenised matrix.
    pub fn new(medium: M) -> Result<Self> {
        let (n1, res) = corrector_first(&medium)?;
        let hat_h = hom_h2(&medium, &n1)?;
        let m1 = TensorField::from_fn(2, |i| medium.constant(if i[0] == i[1] { 1.0 } else { 0.0 }));
        let z = tf_add(&medium, 1.0, &tf_curl(&medium, &n1), 1.0, &m1);
        let az = tf_apply_coef(&medium, &z);
        let l = tf_zero(&medium, 2);
        let level = Level { n: n1, m: m1, l, z, az, h: ConstTensor::zeros(2).unwrap(), hat_h, residual: res };
        Ok(CellHierarchy { medium, levels: vec![level], k: Vec::new() })
    }

    /// Hierarchy with correctors N^(1..=levels).
    pub fn build(medium: M, levels: usize) -> Result<Self> {
        let mut h = Self::new(medium)?;
        while h.depth() < levels {
            h.ascend()?;
        }
        Ok(h)
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Level j (1-based).
    pub fn level(&self, j: usize) -> Result<&Level<M::Scalar>> {
        if j == 0 {
            return Err(Error::MissingLevel(0));
        }
        self.levels.get(j - 1).ok_or(Error::MissingLevel(j))
    }

    /// hat h^(r) for r >= 2.
    pub fn hat_h(&self, r: usize) -> Result<&ConstTensor> {
        if r < 2 {
            return Err(Error::MissingLevel(r));
        }
        Ok(&self.level(r - 1)?.hat_h)
    }

    /// All available hat h tensors, starting at order 2.
    pub fn hat_h_list(&self) -> Vec<ConstTensor> {
        self.levels.iter().map(|l| l.hat_h.clone()).collect()
    }

    /// Add corrector level j+1 from level j.
    pub fn ascend(&mut self) -> Result<()> {
        let j = self.depth();
        if j + 2 > MAX_ORDER {
            return Err(Error::LevelUnsupported { requested: j + 1, max: MAX_ORDER - 2 });
        }
        let md = &self.medium;
        let prev = &self.levels[j - 1];
        let m_next = tf_shuffle_m(md, &prev.n);
        let l_next = tf_shuffle_m(md, &prev.az);
        let h_next = tf_mean(md, &l_next);
        let am = tf_apply_coef(md, &m_next);
        let g = tf_sym_middle(md, &tf_add(md, -1.0, &am, 0.0, &am));
        let hconst = TensorField::from_fn(l_next.order, |i| md.constant(h_next.at(i)));
        let h = tf_sym_middle(md, &tf_add(md, -1.0, &l_next, 1.0, &hconst));
        let (n_next, residual) = solve_columns(md, Some(&g), Some(&h), true)?;
        let z = tf_add(md, 1.0, &tf_curl(md, &n_next), 1.0, &m_next);
        let az = tf_apply_coef(md, &z);
        let hat_h = tf_mean(md, &az);
        self.levels.push(Level { n: n_next, m: m_next, l: l_next, z, az, h: h_next, hat_h, residual });
        Ok(())
    }

    /// K^(l) (1-based, l <= depth + 1), computing missing levels on demand.
    pub fn solve_k(&mut self, upto: usize) -> Result<()> {
        if upto > self.depth() + 1 {
            return Err(Error::MissingLevel(upto - 1));
        }
        let md = &self.medium;
        if self.k.is_empty() {
            self.k.push(tf_zero(md, 2));
        }
        while self.k.len() < upto {
            let l = self.k.len(); // building K^(l+1)
            let kl = &self.k[l - 1];
            let n_l = &self.levels[l - 1].n;
            let r = l + 2;
            let rhs = TensorField::from_fn(r, |idx| {
                let mut acc = md.zero();
                // 2 d_{i1} K^(l)_{i2..}
                acc = md.lin(1.0, &acc, 2.0, &md.deriv(kl.at(&idx[1..]), idx[0]));
                // delta_{i1 i2} K^(l-1)_{i3..}
                if l >= 2 && idx[0] == idx[1] {
                    acc = md.lin(1.0, &acc, 1.0, self.k[l - 2].at(&idx[2..]));
                }
                // N^(l)_{i1..il q} eps_{q i_{l+1} m}
                let mut src = idx[..l].to_vec();
                src.push(0);
                for q in 0..3 {
                    let e = eps3(q, idx[l], idx[l + 1]);
                    if e == 0.0 {
                        continue;
                    }
                    src[l] = q;
                    acc = md.lin(1.0, &acc, e, n_l.at(&src));
                }
                acc
            });
            let rhs = tf_sym_leading(md, &rhs, l + 1);
            let mut out = tf_zero(md, r);
            let mut cache: BTreeMap<Vec<usize>, M::Scalar> = BTreeMap::new();
            for idx in multi_indices(r) {
                let mut key = idx.clone();
                key[..l + 1].sort_unstable();
                if let Some(v) = cache.get(&key) {
                    out.comps[flat_index(&idx)] = v.clone();
                    continue;
                }
                let g = rhs.at(&key);
                let mean = md.mean(g);
                let scale = md.rms(g).max(1.0);
                if mean.abs() > md.check_tol() * scale {
                    return Err(Error::SolvabilityViolated {
                        what: format!("K^({}) right-hand side mean", l + 1),
                        residual: mean.abs(),
                        tol: md.check_tol() * scale,
                    });
                }
                let neg = md.lin(-1.0, g, 0.0, g);
                let v = md.solve_poisson(&neg)?;
                out.comps[flat_index(&idx)] = v.clone();
                cache.insert(key, v);
            }
            self.k.push(out);
        }
        Ok(())
    }

    /// K^(l), 1-based.
    pub fn k(&self, l: usize) -> Result<&TensorField<M::Scalar>> {
        if l == 0 {
            return Err(Error::MissingLevel(0));
        }
        self.k.get(l - 1).ok_or(Error::MissingLevel(l))
    }

    /// <(A Z^(j+1))_{s I} Z^(k+1)_{s J}> laid out as (I, J).
    pub fn tilde_h_direct(&self, j: usize, k: usize) -> Result<ConstTensor> {
        let a = self.level(j + 1)?;
        let b = self.level(k + 1)?;
        let md = &self.medium;
        pair_mean(md, &a.az, &b.z, j + 1, k + 1)
    }

    /// Alternative formula <A Z^(j+1) M^(k+1)> - <L^(j+1) N^(k+1)>.
    pub fn tilde_h_alternative(&self, j: usize, k: usize) -> Result<ConstTensor> {
        let a = self.level(j + 1)?;
        let b = self.level(k + 1)?;
        let md = &self.medium;
        let first = pair_mean(md, &a.az, &b.m, j + 1, k + 1)?;
        let second = pair_mean(md, &a.l, &b.n, j + 1, k + 1)?;
        Ok(first.sub(&second))
    }

    /// h~^(j,k), verified against the alternative formula after symmetrising
    /// each derivative group.
    pub fn tilde_h(&self, j: usize, k: usize) -> Result<ConstTensor> {
        let direct = self.tilde_h_direct(j, k)?;
        let alt = self.tilde_h_alternative(j, k)?;
        let dev = symmetrize_groups(&direct, j, k).max_abs_diff(&symmetrize_groups(&alt, j, k));
        let tol = self.medium.check_tol() * direct.max_abs().max(1.0);
        if dev > tol {
            return Err(Error::TildeMismatch { j, k, deviation: dev });
        }
        Ok(direct)
    }

    /// All pairs with j + k <= n.
    pub fn tilde_pairs(&self, n: usize) -> Result<BTreeMap<(usize, usize), ConstTensor>> {
        let mut out = BTreeMap::new();
        for s in 0..=n {
            for j in 0..=s {
                out.insert((j, s - j), self.tilde_h(j, s - j)?);
            }
        }
        Ok(out)
    }

    /// All pairs with j, k <= kmax.
    pub fn tilde_square(&self, kmax: usize) -> Result<BTreeMap<(usize, usize), ConstTensor>> {
        let mut out = BTreeMap::new();
        for j in 0..=kmax {
            for k in 0..=kmax {
                out.insert((j, k), self.tilde_h(j, k)?);
            }
        }
        Ok(out)
    }

    /// Compare symmetrised hat h^(n+2) with the symmetrised signed pair sum.
    pub fn verify_equivalence(&self, n: usize) -> Result<EquivalenceReport> {
        let hat = self.hat_h(n + 2)?.clone();
        let pairs = self.tilde_pairs(n)?;
        let tt = tilde_tilde(&pairs, n)?;
        let sym_dev = symmetrize(&hat).max_abs_diff(&symmetrize(&tt));
        // tensors that vanish by symmetry are measured against hat h^(2)
        let scale = hat.max_abs().max(tt.max_abs()).max(self.hat_h(2)?.max_abs());
        Ok(EquivalenceReport {
            n,
            max_deviation: sym_dev,
            relative_deviation: sym_dev / scale,
            unsymmetrised_deviation: hat.max_abs_diff(&tt),
            scale,
        })
    }
}

/// T_{I J} = sum_s <X_{s I} Y_{s J}> for X of order a+1 and Y of order b+1.
fn pair_mean<M: CellMedium>(
    m: &M,
    x: &TensorField<M::Scalar>,
    y: &TensorField<M::Scalar>,
    a: usize,
    b: usize,
) -> Result<ConstTensor> {
    let order = a + b;
    if order > MAX_ORDER {
        return Err(Error::OrderOutOfRange { order, max: MAX_ORDER });
    }
    let entries: Vec<f64> = multi_indices(order)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|idx| {
            (0..3)
                .map(|s| {
                    let mut i = vec![s];
                    i.extend_from_slice(&idx[..a]);
                    let mut jj = vec![s];
                    jj.extend_from_slice(&idx[a..]);
                    m.mean(&m.mul(x.at(&i), y.at(&jj)))
                })
                .sum()
        })
        .collect();
    ConstTensor::from_entries(order, entries)
}

/// Symmetrise a pair tensor laid out as (d_1..d_j, a, e_1..e_k, b) over each
/// derivative group separately.
pub fn symmetrize_groups(h: &ConstTensor, j: usize, k: usize) -> ConstTensor {
    assert_eq!(h.order(), j + k + 2);
    let pj = permutations(j);
    let pk = permutations(k);
    let w = 1.0 / (pj.len() * pk.len()) as f64;
    ConstTensor::from_fn(h.order(), |idx| {
        let mut src = idx.to_vec();
        let mut acc = 0.0;
        for p in &pj {
            for (slot, &q) in p.iter().enumerate() {
                src[slot] = idx[q];
            }
            for p2 in &pk {
                for (slot, &q) in p2.iter().enumerate() {
                    src[j + 1 + slot] = idx[j + 1 + q];
                }
                acc += h.at(&src);
            }
        }
        acc * w
    })
    .unwrap()
}

/// Outcome of the asymptotic/variational coefficient comparison.
#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceReport {
    pub n: usize,
    pub max_deviation: f64,
    pub relative_deviation: f64,
    /// Entrywise deviation before symmetrisation (exact zero expected for n = 1).
    pub unsymmetrised_deviation: f64,
    pub scale: f64,
}

/// The same recurrences run with the inverse permittivity as coefficient.
/// Naming follows the magnetic-field problem: T^(j) = N^(j), R^(j) = M^(j),
/// k-hat = h-hat, k-tilde = h-tilde.
pub struct MagneticHierarchy<M: CellMedium>(pub CellHierarchy<M>);

impl<M: CellMedium> MagneticHierarchy<M> {
    pub fn t(&self, j: usize) -> Result<&TensorField<M::Scalar>> {
        Ok(&self.0.level(j)?.n)
    }

    pub fn r(&self, j: usize) -> Result<&TensorField<M::Scalar>> {
        Ok(&self.0.level(j)?.m)
    }

    pub fn k_hat(&self, r: usize) -> Result<&ConstTensor> {
        self.0.hat_h(r)
    }

    pub fn k_tilde(&self, j: usize, l: usize) -> Result<ConstTensor> {
        self.0.tilde_h(j, l)
    }

    pub fn k_tilde_tilde(&self, n: usize) -> Result<ConstTensor> {
        tilde_tilde(&self.0.tilde_pairs(n)?, n)
    }
}

/// Build the magnetic hierarchy from a medium whose coefficient is the
/// inverse permittivity.
pub fn magnetic_hierarchy<M: CellMedium>(epsilon_inv: M, levels: usize) -> Result<MagneticHierarchy<M>> {
    Ok(MagneticHierarchy(CellHierarchy::build(epsilon_inv, levels)?))
}
