//! Dense constant tensors over three dimensions.
//!
//! Entries are stored row-major (first index slowest). The public accessors
//! [`ConstTensor::get`] and [`ConstTensor::from_fn_1based`] use indices in
//! `1..=3`; everything suffixed `0` or taking `&[usize]` in internal helpers
//! is zero-based.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 8;

/// Iterate all zero-based multi-indices of length `order` in row-major order.
pub fn multi_indices(order: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = 3usize.pow(order as u32);
    (0..total).map(move |mut flat| {
        let mut idx = vec![0; order];
        for slot in idx.iter_mut().rev() {
            *slot = flat % 3;
            flat /= 3;
        }
        idx
    })
}

/// Row-major flat offset of a zero-based multi-index.
#[inline]
pub fn flat_index(idx: &[usize]) -> usize {
    idx.iter().fold(0, |acc, &i| acc * 3 + i)
}

/// Sign of the permutation (i, j, k) of (0, 1, 2); zero on repeats.
#[inline]
pub fn eps3(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor", into = "RawTensor")]
pub struct ConstTensor {
    order: usize,
    entries: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawTensor {
    order: usize,
    entries: Vec<f64>,
}

impl TryFrom<RawTensor> for ConstTensor {
    type Error = Error;
    fn try_from(raw: RawTensor) -> Result<Self> {
        ConstTensor::from_entries(raw.order, raw.entries)
    }
}

impl From<ConstTensor> for RawTensor {
    fn from(t: ConstTensor) -> Self {
        RawTensor { order: t.order, entries: t.entries }
    }
}

impl ConstTensor {
    pub fn zeros(order: usize) -> Result<Self> {
        check_order(order)?;
        Ok(ConstTensor { order, entries: vec![0.0; 3usize.pow(order as u32)] })
    }

    pub fn from_entries(order: usize, entries: Vec<f64>) -> Result<Self> {
        check_order(order)?;
        if entries.len() != 3usize.pow(order as u32) {
            return Err(Error::EntryCount { order, got: entries.len() });
        }
        if let Some(p) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(p));
        }
        Ok(ConstTensor { order, entries })
    }

    /// Build from a function of the zero-based multi-index.
    pub fn from_fn(order: usize, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        check_order(order)?;
        let entries: Vec<f64> = multi_indices(order).map(|i| f(&i)).collect();
        Self::from_entries(order, entries)
    }

    /// Build from a function of the one-based multi-index.
    pub fn from_fn_1based(order: usize, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        Self::from_fn(order, |i| {
            let one: Vec<usize> = i.iter().map(|x| x + 1).collect();
            f(&one)
        })
    }

    /// Tensor with the listed one-based index strings (e.g. "1212") set to `value`.
    pub fn from_pattern(order: usize, pattern: &[(&[&str], f64)]) -> Result<Self> {
        let mut t = Self::zeros(order)?;
        for (keys, v) in pattern {
            for key in keys.iter() {
                let idx: Vec<usize> = key
                    .chars()
                    .map(|c| c.to_digit(10).expect("index digit") as usize - 1)
                    .collect();
                if idx.len() != order {
                    return Err(Error::OrderMismatch { expected: order, got: idx.len() });
                }
                t.entries[flat_index(&idx)] = *v;
            }
        }
        Ok(t)
    }

    pub fn identity() -> Self {
        Self::from_fn(2, |i| if i[0] == i[1] { 1.0 } else { 0.0 }).unwrap()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// One-based entry access.
    pub fn get(&self, idx: &[usize]) -> f64 {
        assert_eq!(idx.len(), self.order, "index length");
        let zero: Vec<usize> = idx.iter().map(|&i| {
            assert!((1..=3).contains(&i), "index {i} outside 1..=3");
            i - 1
        }).collect();
        self.entries[flat_index(&zero)]
    }

    /// Zero-based entry access.
    #[inline]
    pub fn at(&self, idx: &[usize]) -> f64 {
        self.entries[flat_index(idx)]
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &ConstTensor) -> f64 {
        assert_eq!(self.order, other.order);
        self.entries
            .iter()
            .zip(&other.entries)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn add(&self, other: &ConstTensor) -> ConstTensor {
        assert_eq!(self.order, other.order);
        let entries = self.entries.iter().zip(&other.entries).map(|(a, b)| a + b).collect();
        ConstTensor { order: self.order, entries }
    }

    pub fn sub(&self, other: &ConstTensor) -> ConstTensor {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> ConstTensor {
        ConstTensor { order: self.order, entries: self.entries.iter().map(|v| v * s).collect() }
    }

    /// 3x3 matrix view of an order-2 tensor.
    pub fn as_matrix(&self) -> [[f64; 3]; 3] {
        assert_eq!(self.order, 2);
        let mut m = [[0.0; 3]; 3];
        for (a, row) in m.iter_mut().enumerate() {
            for (b, v) in row.iter_mut().enumerate() {
                *v = self.entries[3 * a + b];
            }
        }
        m
    }

    /// Contract every middle index with `q`: S_am = h_{a q..q m}.
    pub fn contract_middle(&self, q: [f64; 3]) -> [[f64; 3]; 3] {
        assert!(self.order >= 2);
        self.contract_groups(0, q)
    }

    /// For a pair tensor laid out as (d_1..d_j, a, e_1..e_k, b), contract
    /// both derivative groups with `q` and return the (a, b) matrix.
    pub fn contract_groups(&self, j: usize, q: [f64; 3]) -> [[f64; 3]; 3] {
        assert!(self.order >= j + 2);
        let mut out = [[0.0; 3]; 3];
        for (flat, idx) in multi_indices(self.order).enumerate() {
            let v = self.entries[flat];
            if v == 0.0 {
                continue;
            }
            let mut w = v;
            for (p, &i) in idx.iter().enumerate() {
                if p != j && p != self.order - 1 {
                    w *= q[i];
                }
            }
            out[idx[j]][idx[self.order - 1]] += w;
        }
        out
    }
}

fn check_order(order: usize) -> Result<()> {
    if order > MAX_ORDER {
        return Err(Error::OrderOutOfRange { order, max: MAX_ORDER });
    }
    Ok(())
}

/// The permutation symbol as an order-3 tensor.
pub fn levi_civita() -> ConstTensor {
    ConstTensor::from_fn(3, |i| eps3(i[0], i[1], i[2])).unwrap()
}

/// out_{i1 i2 rest} = eps_{i1 i2 s} N_{s rest}; an order-1 input is the base
/// case and yields the identity matrix.
pub fn shuffle_m(n: &ConstTensor) -> Result<ConstTensor> {
    match n.order {
        0 => Err(Error::OrderMismatch { expected: 1, got: 0 }),
        1 => Ok(ConstTensor::identity()),
        r => ConstTensor::from_fn(r + 1, |i| {
            (0..3)
                .map(|s| {
                    let e = eps3(i[0], i[1], s);
                    if e == 0.0 {
                        return 0.0;
                    }
                    let mut src = Vec::with_capacity(r);
                    src.push(s);
                    src.extend_from_slice(&i[2..]);
                    e * n.at(&src)
                })
                .sum()
        }),
    }
}

/// Heap's algorithm: all permutations of `0..n`.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = vec![a.clone()];
    let mut c = vec![0; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

/// Average over all permutations of the middle indices; first and last fixed.
pub fn symmetrize(h: &ConstTensor) -> ConstTensor {
    let r = h.order;
    if r < 4 {
        return h.clone();
    }
    let m = r - 2;
    let perms = permutations(m);
    let inv = 1.0 / perms.len() as f64;
    ConstTensor::from_fn(r, |i| {
        let mut src = i.to_vec();
        let mut acc = 0.0;
        for p in &perms {
            for (slot, &pk) in p.iter().enumerate() {
                src[1 + slot] = i[1 + pk];
            }
            acc += h.at(&src);
        }
        acc * inv
    })
    .unwrap()
}

/// Average over permutations of the leading `m` indices.
pub fn symmetrize_leading(h: &ConstTensor, m: usize) -> ConstTensor {
    assert!(m <= h.order);
    if m < 2 {
        return h.clone();
    }
    let perms = permutations(m);
    let inv = 1.0 / perms.len() as f64;
    ConstTensor::from_fn(h.order, |i| {
        let mut src = i.to_vec();
        let mut acc = 0.0;
        for p in &perms {
            for (slot, &pk) in p.iter().enumerate() {
                src[slot] = i[pk];
            }
            acc += h.at(&src);
        }
        acc * inv
    })
    .unwrap()
}

/// Source positions (zero-based, into an order n+2 index) of the two signed
/// terms for the pair (j, k) with j + k = n. Positions refer to the output
/// index slots 0..n+2.
pub(crate) fn tilde_tilde_maps(j: usize, k: usize) -> (Vec<usize>, Vec<usize>) {
    // one-based slot t maps to zero-based t-1
    let mut first = Vec::new();
    if j >= 1 {
        first.push(j); // i_{j+1}
        first.extend(1..j); // i_2..i_j
    }
    let mut t1 = first.clone();
    t1.push(0); // i_1
    t1.extend(j + 1..j + k + 2); // i_{j+2}..i_{j+k+2}
    let mut t2 = first;
    t2.push(j + k + 1); // i_{j+k+2}
    t2.extend(j + 1..j + k + 1); // i_{j+2}..i_{j+k+1}
    t2.push(0); // i_1
    (t1, t2)
}

fn gather(h: &ConstTensor, map: &[usize], i: &[usize], buf: &mut Vec<usize>) -> f64 {
    buf.clear();
    buf.extend(map.iter().map(|&p| i[p]));
    h.at(buf)
}

/// The signed index-permutation sum combining the pair tensors of total
/// derivative order `n` into one tensor of order n+2.
pub fn tilde_tilde(pairs: &BTreeMap<(usize, usize), ConstTensor>, n: usize) -> Result<ConstTensor> {
    let mut terms = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let k = n - j;
        let h = pairs.get(&(j, k)).ok_or(Error::MissingPair { j, k })?;
        if h.order != n + 2 {
            return Err(Error::OrderMismatch { expected: n + 2, got: h.order });
        }
        let (t1, t2) = tilde_tilde_maps(j, k);
        let s1 = if j % 2 == 0 { 1.0 } else { -1.0 };
        let s2 = if k % 2 == 0 { 1.0 } else { -1.0 };
        terms.push((h, t1, t2, s1, s2));
    }
    let mut buf = Vec::with_capacity(n + 2);
    ConstTensor::from_fn(n + 2, |i| {
        let mut acc = 0.0;
        for (h, t1, t2, s1, s2) in &terms {
            acc += s1 * gather(h, t1, i, &mut buf) + s2 * gather(h, t2, i, &mut buf);
        }
        0.5 * acc
    })
}

/// The single-sum form obtained after symmetrising `tilde_tilde`: the
/// symmetrised first half of the signed sum.
pub fn tilde_tilde_single_sum(
    pairs: &BTreeMap<(usize, usize), ConstTensor>,
    n: usize,
) -> Result<ConstTensor> {
    let mut buf = Vec::with_capacity(n + 2);
    let mut acc = ConstTensor::zeros(n + 2)?;
    for j in 0..=n {
        let k = n - j;
        let h = pairs.get(&(j, k)).ok_or(Error::MissingPair { j, k })?;
        let (t1, _) = tilde_tilde_maps(j, k);
        let s = if j % 2 == 0 { 1.0 } else { -1.0 };
        let part = ConstTensor::from_fn(n + 2, |i| s * gather(h, &t1, i, &mut buf))?;
        acc = acc.add(&part);
    }
    Ok(symmetrize(&acc))
}

/// Rearrangement h̄_{i_1..i_{j+k+2}} = h̃_{i_{j+1} i_2..i_j i_{j+k+2} i_{j+2}..i_{j+k+1} i_1}.
pub fn bar_shuffle(h: &ConstTensor, j: usize, k: usize) -> Result<ConstTensor> {
    if h.order != j + k + 2 {
        return Err(Error::OrderMismatch { expected: j + k + 2, got: h.order });
    }
    let (_, t2) = tilde_tilde_maps(j, k);
    let mut buf = Vec::with_capacity(h.order);
    ConstTensor::from_fn(h.order, |i| gather(h, &t2, i, &mut buf))
}

/// Outcome of the third-order kernel test.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnnihilatorReport {
    pub annihilates: bool,
    /// a_1..a_6 when the pattern matches.
    pub coefficients: Option<[f64; 6]>,
    /// Largest entry deviation from the fitted pattern.
    pub pattern_deviation: f64,
    /// Largest per-mode symbol magnitude over the integer test lattice.
    pub symbol_max: f64,
}

/// The ten-case pattern for given a_1..a_6.
pub fn annihilator_pattern(a: [f64; 6]) -> ConstTensor {
    ConstTensor::from_pattern(
        3,
        &[
            (&["122", "133"], a[0]),
            (&["221", "331"], a[1]),
            (&["211", "233"], a[2]),
            (&["112", "332"], a[3]),
            (&["311", "322"], a[4]),
            (&["113", "223"], a[5]),
            (&["111"], a[0] + a[1]),
            (&["222"], a[2] + a[3]),
            (&["333"], a[4] + a[5]),
        ],
    )
    .unwrap()
}

/// Cross-product matrix: cross(q) c = q x c.
pub fn cross_matrix(q: [f64; 3]) -> [[f64; 3]; 3] {
    [[0.0, -q[2], q[1]], [q[2], 0.0, -q[0]], [-q[1], q[0], 0.0]]
}

pub fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|s| a[i][s] * b[s][j]).sum();
        }
    }
    c
}

/// Max entry of cross(k) S(k) cross(k) over the integer lattice {-2..2}^3 \ 0,
/// where S(k)_am = h_{a d m} k_d. Up to a unimodular factor this is the
/// per-mode matrix of curl{h grad curl .} acting on divergence-free amplitudes.
pub fn curl_symbol_max(h: &ConstTensor) -> f64 {
    let mut m: f64 = 0.0;
    for a in -2i32..=2 {
        for b in -2i32..=2 {
            for c in -2i32..=2 {
                if a == 0 && b == 0 && c == 0 {
                    continue;
                }
                let k = [a as f64, b as f64, c as f64];
                let x = cross_matrix(k);
                let s = h.contract_middle(k);
                let p = matmul3(&matmul3(&x, &s), &x);
                for row in p {
                    for v in row {
                        m = m.max(v.abs());
                    }
                }
            }
        }
    }
    m
}

/// Decide whether curl{h grad curl v} vanishes for every v.
pub fn third_order_curl_annihilator(h: &ConstTensor) -> Result<AnnihilatorReport> {
    if h.order != 3 {
        return Err(Error::OrderMismatch { expected: 3, got: h.order });
    }
    let a = [
        h.get(&[1, 2, 2]),
        h.get(&[2, 2, 1]),
        h.get(&[2, 1, 1]),
        h.get(&[1, 1, 2]),
        h.get(&[3, 1, 1]),
        h.get(&[1, 1, 3]),
    ];
    let pattern = annihilator_pattern(a);
    let dev = pattern.max_abs_diff(h);
    let tol = 1e-12 * h.max_abs().max(1.0);
    let annihilates = dev <= tol;
    Ok(AnnihilatorReport {
        annihilates,
        coefficients: annihilates.then_some(a),
        pattern_deviation: dev,
        symbol_max: curl_symbol_max(h),
    })
}
