//! Multi-indices, Hermite and Laguerre polynomials, symmetric tensors.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// n! as a float. Exact up to 22!.
pub fn factorial(n: usize) -> f64 {
    (2..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// n!/(n-k)!.
pub fn falling(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    ((n - k + 1)..=n).fold(1.0, |acc, j| acc * j as f64)
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for j in 0..k {
        acc = acc * (n - j) as f64 / (j + 1) as f64;
    }
    acc.round()
}

/// Probabilists' Hermite polynomial He_n(x).
pub fn hermite_eval(n: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Fills `out[n] = He_n(x)` for every n < out.len().
pub fn hermite_table(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for n in 2..out.len() {
        out[n] = x * out[n - 1] - (n - 1) as f64 * out[n - 2];
    }
}

/// Laguerre polynomial Q_n of the Gamma(alpha) generator, i.e. the generalized
/// Laguerre polynomial with parameter alpha - 1.
pub fn laguerre_eval(n: usize, alpha: f64, x: f64) -> f64 {
    let a = alpha - 1.0;
    let (mut prev, mut cur) = (1.0, 1.0 + a - x);
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + a - x) * cur - (kf + a) * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Coefficients of Q_n as a polynomial.
pub fn laguerre_poly(n: usize, alpha: f64) -> PolySpec {
    let a = alpha - 1.0;
    let coeffs = (0..=n)
        .map(|i| {
            // C(n + a, n - i) / i! with alternating sign
            let mut c = 1.0;
            for j in 1..=(n - i) {
                c *= (a + i as f64 + j as f64) / j as f64;
            }
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            sign * c / factorial(i)
        })
        .collect();
    PolySpec::new(coeffs)
}

/// Univariate real polynomial, coefficients by ascending degree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolySpec {
    coeffs: Vec<f64>,
}

impl PolySpec {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        PolySpec { coeffs }
    }

    pub fn zero() -> Self {
        PolySpec { coeffs: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![c])
    }

    /// The identity polynomial x.
    pub fn x() -> Self {
        Self::new(vec![0.0, 1.0])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Degree, with the zero polynomial reported as degree 0.
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Self {
        Self::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, &c)| i as f64 * c)
                .collect(),
        )
    }

    pub fn add(&self, other: &Self) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        Self::new(
            (0..n)
                .map(|i| {
                    self.coeffs.get(i).copied().unwrap_or(0.0)
                        + other.coeffs.get(i).copied().unwrap_or(0.0)
                })
                .collect(),
        )
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    pub fn mul(&self, other: &Self) -> Self {
        if self.coeffs.is_empty() || other.coeffs.is_empty() {
            return Self::zero();
        }
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Self::new(out)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let d = self.add(&other.scale(-1.0));
        d.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

/// Sorted multiset of basis labels.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<u16>);

impl MultiIndex {
    pub fn new(mut indices: Vec<u16>) -> Self {
        indices.sort_unstable();
        MultiIndex(indices)
    }

    pub fn empty() -> Self {
        MultiIndex(Vec::new())
    }

    pub fn as_slice(&self) -> &[u16] {
        &self.0
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    /// (label, count) pairs in ascending label order.
    pub fn runs(&self) -> Vec<(u16, usize)> {
        let mut out: Vec<(u16, usize)> = Vec::new();
        for &i in &self.0 {
            match out.last_mut() {
                Some((l, c)) if *l == i => *c += 1,
                _ => out.push((i, 1)),
            }
        }
        out
    }

    /// Number of distinct arrangements, q!/prod a_i!.
    pub fn mult(&self) -> f64 {
        let mut m = factorial(self.order());
        for (_, c) in self.runs() {
            m /= factorial(c);
        }
        m
    }

    pub fn merge(&self, other: &MultiIndex) -> MultiIndex {
        let mut v = Vec::with_capacity(self.0.len() + other.0.len());
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            if self.0[i] <= other.0[j] {
                v.push(self.0[i]);
                i += 1;
            } else {
                v.push(other.0[j]);
                j += 1;
            }
        }
        v.extend_from_slice(&self.0[i..]);
        v.extend_from_slice(&other.0[j..]);
        MultiIndex(v)
    }

    pub fn with(&self, label: u16) -> MultiIndex {
        let pos = self.0.partition_point(|&x| x <= label);
        let mut v = self.0.clone();
        v.insert(pos, label);
        MultiIndex(v)
    }

    /// self minus `sub` as multisets, if `sub` is contained in self.
    pub fn minus(&self, sub: &MultiIndex) -> Option<MultiIndex> {
        let mut out = Vec::with_capacity(self.0.len());
        let mut j = 0;
        for &x in &self.0 {
            if j < sub.0.len() && sub.0[j] == x {
                j += 1;
            } else {
                if j < sub.0.len() && sub.0[j] < x {
                    return None;
                }
                out.push(x);
            }
        }
        (j == sub.0.len()).then_some(MultiIndex(out))
    }

    /// All distinct sub-multisets of size r, paired with their complements.
    pub fn splits(&self, r: usize) -> Vec<(MultiIndex, MultiIndex)> {
        fn go(
            runs: &[(u16, usize)],
            r: usize,
            taken: &mut Vec<u16>,
            rest: &mut Vec<u16>,
            out: &mut Vec<(MultiIndex, MultiIndex)>,
        ) {
            let Some(&(label, count)) = runs.first() else {
                if r == 0 {
                    out.push((MultiIndex(taken.clone()), MultiIndex(rest.clone())));
                }
                return;
            };
            let remaining: usize = runs.iter().map(|x| x.1).sum();
            if remaining < r {
                return;
            }
            for c in 0..=count.min(r) {
                let (t0, r0) = (taken.len(), rest.len());
                taken.extend(std::iter::repeat(label).take(c));
                rest.extend(std::iter::repeat(label).take(count - c));
                go(&runs[1..], r - c, taken, rest, out);
                taken.truncate(t0);
                rest.truncate(r0);
            }
        }
        let mut out = Vec::new();
        go(&self.runs(), r, &mut Vec::new(), &mut Vec::new(), &mut out);
        out
    }
}

/// Every multiset of the given order over labels 0..dim, in lexicographic order.
pub fn multisets(dim: usize, order: usize) -> Vec<MultiIndex> {
    fn go(dim: usize, left: usize, start: u16, cur: &mut Vec<u16>, out: &mut Vec<MultiIndex>) {
        if left == 0 {
            out.push(MultiIndex(cur.clone()));
            return;
        }
        for i in start..dim as u16 {
            cur.push(i);
            go(dim, left - 1, i, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(dim, order, 0, &mut Vec::new(), &mut out);
    out
}

/// Symmetric tensor stored at sorted representatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SymTensorRepr", into = "SymTensorRepr")]
pub struct SymTensor {
    order: usize,
    dim: usize,
    coeffs: BTreeMap<MultiIndex, f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SymTensorRepr {
    order: usize,
    dim: usize,
    entries: Vec<(Vec<u16>, f64)>,
}

impl From<SymTensor> for SymTensorRepr {
    fn from(t: SymTensor) -> Self {
        SymTensorRepr {
            order: t.order,
            dim: t.dim,
            entries: t.coeffs.into_iter().map(|(k, v)| (k.0, v)).collect(),
        }
    }
}

impl TryFrom<SymTensorRepr> for SymTensor {
    type Error = Error;

    fn try_from(r: SymTensorRepr) -> Result<Self> {
        if r.dim == 0 {
            return Err(Error::invalid("tensor dimension must be positive"));
        }
        let mut t = SymTensor::zeros(r.order, r.dim);
        for (idx, v) in r.entries {
            if idx.len() != r.order {
                return Err(Error::invalid(format!(
                    "entry {idx:?} has length {} but the tensor order is {}",
                    idx.len(),
                    r.order
                )));
            }
            if idx.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::invalid(format!("entry {idx:?} is not sorted")));
            }
            if idx.iter().any(|&i| i as usize >= r.dim) {
                return Err(Error::invalid(format!("entry {idx:?} exceeds dimension {}", r.dim)));
            }
            if !v.is_finite() {
                return Err(Error::invalid(format!("entry {idx:?} is not finite")));
            }
            if t.coeffs.insert(MultiIndex(idx.clone()), v).is_some() {
                return Err(Error::invalid(format!("entry {idx:?} appears twice")));
            }
        }
        Ok(t)
    }
}

impl SymTensor {
    pub fn zeros(order: usize, dim: usize) -> Self {
        SymTensor { order, dim, coeffs: BTreeMap::new() }
    }

    /// Order-zero tensor holding a scalar.
    pub fn scalar(dim: usize, c: f64) -> Self {
        let mut t = Self::zeros(0, dim);
        t.set(MultiIndex::empty(), c);
        t
    }

    /// Basis vector e_i.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut t = Self::zeros(1, dim);
        t.set(MultiIndex(vec![i as u16]), 1.0);
        t
    }

    /// sum_i zeta_i e_i (x) e_i over dim = zeta.len().
    pub fn diagonal(zeta: &[f64]) -> Self {
        let mut t = Self::zeros(2, zeta.len());
        for (i, &z) in zeta.iter().enumerate() {
            t.set(MultiIndex(vec![i as u16, i as u16]), z);
        }
        t
    }

    /// Entries uniform on [-1, 1] at every multiset.
    pub fn random<R: Rng + ?Sized>(order: usize, dim: usize, rng: &mut R) -> Self {
        let mut t = Self::zeros(order, dim);
        for m in multisets(dim, order) {
            t.set(m, rng.gen_range(-1.0..1.0));
        }
        t
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.coeffs.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.coeffs.iter().map(|(k, &v)| (k, v))
    }

    /// Coordinate at any (not necessarily sorted) index tuple.
    pub fn get(&self, idx: &[u16]) -> f64 {
        let key = MultiIndex::new(idx.to_vec());
        self.coeffs.get(&key).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, key: MultiIndex, value: f64) {
        debug_assert_eq!(key.order(), self.order);
        if value == 0.0 {
            self.coeffs.remove(&key);
        } else {
            self.coeffs.insert(key, value);
        }
    }

    fn accumulate(&mut self, key: MultiIndex, value: f64) {
        *self.coeffs.entry(key).or_insert(0.0) += value;
    }

    fn prune(&mut self) {
        self.coeffs.retain(|_, v| *v != 0.0);
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm_sq(&self) -> f64 {
        self.entries().map(|(k, v)| k.mult() * v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn inner(&self, other: &SymTensor) -> f64 {
        let (small, large) = if self.nnz() <= other.nnz() { (self, other) } else { (other, self) };
        small
            .entries()
            .filter_map(|(k, v)| large.coeffs.get(k).map(|w| k.mult() * v * w))
            .sum()
    }

    pub fn scale(&self, s: f64) -> SymTensor {
        let mut t = self.clone();
        t.coeffs.values_mut().for_each(|v| *v *= s);
        t.prune();
        t
    }

    /// self + s * other.
    pub fn axpy(&self, s: f64, other: &SymTensor) -> Result<SymTensor> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch(self.dim, other.dim));
        }
        if self.order != other.order {
            return Err(Error::invalid("adding tensors of different orders"));
        }
        let mut t = self.clone();
        for (k, v) in other.entries() {
            t.accumulate(k.clone(), s * v);
        }
        t.prune();
        Ok(t)
    }

    /// The slice f(a, .) fixing the labels of `a`.
    pub fn slice(&self, a: &MultiIndex) -> SymTensor {
        let mut t = SymTensor::zeros(self.order - a.order(), self.dim);
        for (k, v) in self.entries() {
            if let Some(rest) = k.minus(a) {
                t.coeffs.insert(rest, v);
            }
        }
        t
    }

    /// Symmetrized r-th contraction sym(f (x)_r g).
    pub fn contract_sym(&self, other: &SymTensor, r: usize) -> Result<SymTensor> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch(self.dim, other.dim));
        }
        if r > self.order.min(other.order) {
            return Err(Error::InvalidContraction { r, n: self.order, m: other.order });
        }
        let mut by_shared: BTreeMap<MultiIndex, Vec<(MultiIndex, f64)>> = BTreeMap::new();
        for (k, v) in other.entries() {
            for (c, b) in k.splits(r) {
                let w = b.mult() * v;
                by_shared.entry(c).or_default().push((b, w));
            }
        }
        let mut out = SymTensor::zeros(self.order + other.order - 2 * r, self.dim);
        for (k, v) in self.entries() {
            for (c, a) in k.splits(r) {
                let Some(list) = by_shared.get(&c) else { continue };
                let w = a.mult() * c.mult() * v;
                for (b, wb) in list {
                    out.accumulate(a.merge(b), w * wb);
                }
            }
        }
        for (k, v) in out.coeffs.iter_mut() {
            *v /= k.mult();
        }
        out.prune();
        Ok(out)
    }

    /// Symmetrized tensor product.
    pub fn tensor_product(&self, other: &SymTensor) -> Result<SymTensor> {
        self.contract_sym(other, 0)
    }
}

/// Dense tensor with d^order coordinates, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    order: usize,
    dim: usize,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(order: usize, dim: usize) -> Self {
        DenseTensor { order, dim, data: vec![0.0; dim.pow(order as u32)] }
    }

    pub fn random<R: Rng + ?Sized>(order: usize, dim: usize, rng: &mut R) -> Self {
        let mut t = Self::zeros(order, dim);
        t.data.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        t
    }

    pub fn from_sym(f: &SymTensor) -> Self {
        let mut t = Self::zeros(f.order, f.dim);
        let mut idx = vec![0u16; f.order];
        for flat in 0..t.data.len() {
            t.unflatten(flat, &mut idx);
            t.data[flat] = f.get(&idx);
        }
        t
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn unflatten(&self, mut flat: usize, idx: &mut [u16]) {
        for slot in idx.iter_mut().rev() {
            *slot = (flat % self.dim) as u16;
            flat /= self.dim;
        }
    }

    fn flatten(&self, idx: &[u16]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.dim + i as usize)
    }

    pub fn get(&self, idx: &[u16]) -> f64 {
        self.data[self.flatten(idx)]
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_abs_diff(&self, other: &DenseTensor) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Unsymmetrized r-th contraction: the first n - r slots come from f, the last m - r from g.
pub fn contract_dense(f: &DenseTensor, g: &DenseTensor, r: usize) -> Result<DenseTensor> {
    if f.dim != g.dim {
        return Err(Error::DimensionMismatch(f.dim, g.dim));
    }
    if r > f.order.min(g.order) {
        return Err(Error::InvalidContraction { r, n: f.order, m: g.order });
    }
    let (nf, ng) = (f.order - r, g.order - r);
    let mut out = DenseTensor::zeros(nf + ng, f.dim);
    let shared = f.dim.pow(r as u32);
    let mut idx = vec![0u16; nf + ng];
    let mut fi = vec![0u16; f.order];
    let mut gi = vec![0u16; g.order];
    for flat in 0..out.data.len() {
        out.unflatten(flat, &mut idx);
        fi[..nf].copy_from_slice(&idx[..nf]);
        gi[..ng].copy_from_slice(&idx[nf..]);
        let mut acc = 0.0;
        for s in 0..shared {
            let mut rem = s;
            for t in (0..r).rev() {
                let c = (rem % f.dim) as u16;
                rem /= f.dim;
                fi[nf + t] = c;
                gi[ng + t] = c;
            }
            acc += f.get(&fi) * g.get(&gi);
        }
        out.data[flat] = acc;
    }
    Ok(out)
}

/// Coordinates of f (x)_r g as a dense intermediate.
pub fn contract(f: &SymTensor, g: &SymTensor, r: usize) -> Result<DenseTensor> {
    contract_dense(&DenseTensor::from_sym(f), &DenseTensor::from_sym(g), r)
}

/// Average over all permutations of the slots.
pub fn symmetrize(t: &DenseTensor) -> SymTensor {
    let mut sums: BTreeMap<MultiIndex, (f64, usize)> = BTreeMap::new();
    let mut idx = vec![0u16; t.order];
    for flat in 0..t.data.len() {
        t.unflatten(flat, &mut idx);
        let e = sums.entry(MultiIndex::new(idx.clone())).or_insert((0.0, 0));
        e.0 += t.data[flat];
        e.1 += 1;
    }
    let mut out = SymTensor::zeros(t.order, t.dim);
    for (k, (s, c)) in sums {
        out.set(k, s / c as f64);
    }
    out
}
