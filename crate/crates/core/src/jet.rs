//! Truncated multivariate Taylor polynomials.
//!
//! A jet stores Taylor coefficients c_a = (d^a F)(z)/a! for every monomial of
//! total degree at most its valid order. Monomials are ordered by degree so a
//! jet of valid order m is a prefix of the full coefficient table.

use std::collections::HashMap;

use crate::chaos::{CompiledChaos, EvalScratch};
use crate::hermite::{binomial, factorial, multisets, MultiIndex};

#[derive(Clone, Debug)]
pub struct JetSpace {
    dim: usize,
    order: usize,
    index: HashMap<Vec<u8>, usize>,
    /// number of monomials of degree <= m
    deg_end: Vec<usize>,
    /// (i, j, out) sorted by the degree of out
    mul: Vec<(u32, u32, u32)>,
    mul_end: Vec<usize>,
    /// per variable: (src, dst, factor) sorted by src
    deriv: Vec<Vec<(u32, u32, f64)>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    valid: usize,
    c: Vec<f64>,
}

impl Jet {
    pub fn value(&self) -> f64 {
        self.c[0]
    }

    pub fn valid_order(&self) -> usize {
        self.valid
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.c
    }
}

impl JetSpace {
    pub fn new(dim: usize, order: usize) -> Self {
        let mut exps = Vec::new();
        let mut deg_end = Vec::new();
        for deg in 0..=order {
            for m in multisets(dim, deg) {
                let mut e = vec![0u8; dim];
                for &i in m.as_slice() {
                    e[i as usize] += 1;
                }
                exps.push(e);
            }
            deg_end.push(exps.len());
        }
        let index: HashMap<Vec<u8>, usize> = exps.iter().cloned().enumerate().map(|(i, e)| (e, i)).collect();
        let deg = |e: &[u8]| e.iter().map(|&x| x as usize).sum::<usize>();
        let mut mul = Vec::new();
        for (i, a) in exps.iter().enumerate() {
            for (j, b) in exps.iter().enumerate() {
                if deg(a) + deg(b) > order {
                    continue;
                }
                let s: Vec<u8> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                mul.push((i as u32, j as u32, index[&s] as u32));
            }
        }
        mul.sort_by_key(|&(_, _, o)| (deg(&exps[o as usize]), o));
        let mul_end = (0..=order)
            .map(|m| mul.partition_point(|&(_, _, o)| deg(&exps[o as usize]) <= m))
            .collect();
        let mut deriv = vec![Vec::new(); dim];
        for (src, e) in exps.iter().enumerate() {
            for v in 0..dim {
                if e[v] > 0 {
                    let mut t = e.clone();
                    t[v] -= 1;
                    deriv[v].push((src as u32, index[&t] as u32, e[v] as f64));
                }
            }
        }
        JetSpace { dim, order, index, deg_end, mul, mul_end, deriv }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn constant(&self, c: f64, valid: usize) -> Jet {
        let mut v = vec![0.0; self.deg_end[valid]];
        v[0] = c;
        Jet { valid, c: v }
    }

    /// The coordinate function z_v + e_v.
    pub fn coordinate(&self, v: usize, zv: f64, valid: usize) -> Jet {
        let mut j = self.constant(zv, valid);
        if valid >= 1 {
            j.c[1 + v] = 1.0;
        }
        j
    }

    /// Partial derivative of the jet's function at the expansion point.
    pub fn partial(&self, jet: &Jet, idx: &[u16]) -> f64 {
        let mut e = vec![0u8; self.dim];
        for &i in idx {
            e[i as usize] += 1;
        }
        let Some(&k) = self.index.get(&e) else { return 0.0 };
        if k >= jet.c.len() {
            return f64::NAN;
        }
        let weight: f64 = e.iter().map(|&x| factorial(x as usize)).product();
        jet.c[k] * weight
    }

    pub fn mul(&self, a: &Jet, b: &Jet) -> Jet {
        let valid = a.valid.min(b.valid);
        let mut c = vec![0.0; self.deg_end[valid]];
        for &(i, j, o) in &self.mul[..self.mul_end[valid]] {
            c[o as usize] += a.c[i as usize] * b.c[j as usize];
        }
        Jet { valid, c }
    }

    /// a + s * b.
    pub fn axpy(&self, a: &Jet, s: f64, b: &Jet) -> Jet {
        let valid = a.valid.min(b.valid);
        let n = self.deg_end[valid];
        let c = (0..n).map(|k| a.c[k] + s * b.c[k]).collect();
        Jet { valid, c }
    }

    pub fn scale(&self, a: &Jet, s: f64) -> Jet {
        Jet { valid: a.valid, c: a.c.iter().map(|x| x * s).collect() }
    }

    /// Multiplies by the coordinate function z_v + e_v.
    pub fn mul_coordinate(&self, a: &Jet, v: usize, zv: f64) -> Jet {
        let mut c: Vec<f64> = a.c.iter().map(|x| x * zv).collect();
        let n = c.len();
        for &(src, dst, _) in &self.deriv[v] {
            if (src as usize) < n {
                c[src as usize] += a.c[dst as usize];
            }
        }
        Jet { valid: a.valid, c }
    }

    /// d/dz_v, losing one order of validity.
    pub fn deriv(&self, a: &Jet, v: usize) -> Jet {
        assert!(a.valid >= 1, "derivative of an order-0 jet");
        let valid = a.valid - 1;
        let mut c = vec![0.0; self.deg_end[valid]];
        let n = a.c.len();
        for &(src, dst, f) in &self.deriv[v] {
            if (src as usize) < n {
                c[dst as usize] += f * a.c[src as usize];
            }
        }
        Jet { valid, c }
    }

    pub fn recip(&self, a: &Jet) -> Jet {
        let a0 = a.c[0];
        let mut t = self.scale(a, -1.0 / a0);
        t.c[0] = 0.0;
        let mut acc = self.constant(1.0, a.valid);
        for _ in 0..a.valid {
            acc = self.mul(&acc, &t);
            acc.c[0] += 1.0;
        }
        self.scale(&acc, 1.0 / a0)
    }
}

/// Precomputed expansion of a compiled chaos variable into jet coefficients.
pub struct JetProgram {
    constant: f64,
    max_deg: usize,
    valid: usize,
    /// (monomial, weight, factors as (coord, hermite degree))
    parts: Vec<(usize, f64, Vec<(usize, usize)>)>,
}

impl JetProgram {
    pub fn new(f: &CompiledChaos, space: &JetSpace) -> Self {
        let mut parts = Vec::new();
        for t in &f.terms {
            let nf = t.factors.len();
            let mut shifts = vec![0usize; nf];
            loop {
                let total: usize = shifts.iter().sum();
                if total <= space.order {
                    let mut e = vec![0u8; space.dim];
                    let mut w = t.coef;
                    let mut fac = Vec::with_capacity(nf);
                    for (k, &(c, a)) in t.factors.iter().enumerate() {
                        e[c] = shifts[k] as u8;
                        w *= binomial(a, shifts[k]);
                        fac.push((c, a - shifts[k]));
                    }
                    parts.push((space.index[&e], w, fac));
                }
                // next shift vector with shifts[k] <= a_k
                let mut k = 0;
                loop {
                    if k == nf {
                        break;
                    }
                    if shifts[k] < t.factors[k].1 {
                        shifts[k] += 1;
                        break;
                    }
                    shifts[k] = 0;
                    k += 1;
                }
                if k == nf {
                    break;
                }
            }
        }
        JetProgram { constant: f.constant, max_deg: f.max_deg, valid: space.order, parts }
    }

    pub fn eval(&self, space: &JetSpace, z: &[f64]) -> Jet {
        let mut s = EvalScratch::default();
        self.eval_with(space, z, &mut s)
    }

    pub fn eval_with(&self, space: &JetSpace, z: &[f64], s: &mut EvalScratch) -> Jet {
        s.fill(z, self.max_deg);
        let mut jet = space.constant(self.constant, self.valid);
        for (mono, w, fac) in &self.parts {
            let mut p = *w;
            for &(c, a) in fac {
                p *= s.he(self.max_deg, c, a);
            }
            jet.c[*mono] += p;
        }
        jet
    }
}

/// Taylor coefficient key for a multiset of coordinates.
pub fn monomial_of(idx: &MultiIndex, dim: usize) -> Vec<u8> {
    let mut e = vec![0u8; dim];
    for &i in idx.as_slice() {
        e[i as usize] += 1;
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaos::ChaosVector;
    use crate::hermite::SymTensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn he2_jet() {
        let f = ChaosVector::from_kernel({
            let mut t = SymTensor::zeros(2, 2);
            t.set(MultiIndex::new(vec![0, 0]), 1.0);
            t
        });
        let jet = f.eval_jet(&[2.0, 0.5], 2).unwrap();
        let sp = JetSpace::new(2, 2);
        assert_eq!(jet.value(), 3.0);
        assert_eq!(sp.partial(&jet, &[0]), 4.0);
        assert_eq!(sp.partial(&jet, &[0, 0]), 2.0);
        assert_eq!(sp.partial(&jet, &[1]), 0.0);
    }

    #[test]
    fn constant_jet() {
        let f = ChaosVector::constant_value(3, 1.5);
        let jet = f.eval_jet(&[0.1, 0.2, 0.3], 3).unwrap();
        assert_eq!(jet.value(), 1.5);
        assert!(jet.coeffs()[1..].iter().all(|&c| c == 0.0));
    }

    #[test]
    fn jets_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut f = ChaosVector::zero(3);
        for n in 1..=4 {
            f = f.add(&ChaosVector::from_kernel(SymTensor::random(n, 3, &mut rng))).unwrap();
        }
        let sp = JetSpace::new(3, 3);
        let z = [0.4, -0.7, 1.2];
        let jet = f.eval_jet(&z, 3).unwrap();
        let h = 1e-5;
        // first derivatives of the second-derivative jet entries
        for i in 0..3 {
            for j in 0..3 {
                let mut zp = z;
                let mut zm = z;
                zp[i] += h;
                zm[i] -= h;
                let jp = f.eval_jet(&zp, 2).unwrap();
                let jm = f.eval_jet(&zm, 2).unwrap();
                let sp2 = JetSpace::new(3, 2);
                for k in 0..3 {
                    let fd = (sp2.partial(&jp, &[j as u16, k as u16]) - sp2.partial(&jm, &[j as u16, k as u16])) / (2.0 * h);
                    let exact = sp.partial(&jet, &[i as u16, j as u16, k as u16]);
                    assert!((fd - exact).abs() < 1e-6 * exact.abs().max(1.0));
                }
            }
        }
        for _ in 0..5 {
            let z: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            assert!((f.eval_jet(&z, 1).unwrap().value() - f.eval(&z)).abs() < 1e-12);
        }
    }

    #[test]
    fn jet_arithmetic() {
        let sp = JetSpace::new(2, 3);
        let x = sp.coordinate(0, 0.5, 3);
        let y = sp.coordinate(1, 2.0, 3);
        let xy = sp.mul(&x, &y);
        assert_eq!(sp.partial(&xy, &[0, 1]), 1.0);
        let r = sp.recip(&y);
        // 1/y at 2: -1/4, 2/8, -6/16
        assert!((sp.partial(&r, &[1]) + 0.25).abs() < 1e-15);
        assert!((sp.partial(&r, &[1, 1]) - 0.25).abs() < 1e-15);
        assert!((sp.partial(&r, &[1, 1, 1]) + 0.375).abs() < 1e-15);
        let d = sp.deriv(&sp.mul(&xy, &x), 0);
        assert!((d.value() - 2.0 * 0.5 * 2.0).abs() < 1e-15);
        let m = sp.mul_coordinate(&x, 1, 2.0);
        assert_eq!(m, xy);
    }
}
