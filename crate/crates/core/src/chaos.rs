//! Exact calculus on finite Wiener-chaos expansions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::{binomial, factorial, falling, hermite_table, MultiIndex, SymTensor};
use crate::jet::{Jet, JetProgram, JetSpace};

pub const DEFAULT_MAX_ORDER: usize = 16;

fn default_max_order() -> usize {
    DEFAULT_MAX_ORDER
}

/// c + sum_n I_n(f_n) over a d-dimensional Gaussian vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChaosRepr", into = "ChaosRepr")]
pub struct ChaosVector {
    dim: usize,
    constant: f64,
    kernels: BTreeMap<usize, SymTensor>,
    max_order: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChaosRepr {
    dim: usize,
    #[serde(default)]
    constant: f64,
    #[serde(default)]
    kernels: BTreeMap<usize, SymTensor>,
    #[serde(default = "default_max_order")]
    max_order: usize,
}

impl From<ChaosVector> for ChaosRepr {
    fn from(c: ChaosVector) -> Self {
        ChaosRepr { dim: c.dim, constant: c.constant, kernels: c.kernels, max_order: c.max_order }
    }
}

impl TryFrom<ChaosRepr> for ChaosVector {
    type Error = Error;

    fn try_from(r: ChaosRepr) -> Result<Self> {
        if r.dim == 0 {
            return Err(Error::invalid("chaos dimension must be positive"));
        }
        if !r.constant.is_finite() {
            return Err(Error::invalid("constant term is not finite"));
        }
        for (&n, f) in &r.kernels {
            if n == 0 {
                return Err(Error::invalid("kernel of order 0; use the constant field"));
            }
            if f.order() != n {
                return Err(Error::invalid(format!("kernel under key {n} has order {}", f.order())));
            }
            if f.dim() != r.dim {
                return Err(Error::DimensionMismatch(r.dim, f.dim()));
            }
            if n > r.max_order {
                return Err(Error::OrderBudget { needed: n, budget: r.max_order });
            }
        }
        let mut c = ChaosVector { dim: r.dim, constant: r.constant, kernels: r.kernels, max_order: r.max_order };
        c.kernels.retain(|_, f| !f.is_zero());
        Ok(c)
    }
}

impl ChaosVector {
    pub fn zero(dim: usize) -> Self {
        ChaosVector { dim, constant: 0.0, kernels: BTreeMap::new(), max_order: DEFAULT_MAX_ORDER }
    }

    pub fn constant_value(dim: usize, c: f64) -> Self {
        let mut v = Self::zero(dim);
        v.constant = c;
        v
    }

    /// I_q(f) for a kernel of order q (order 0 yields the constant).
    pub fn from_kernel(f: SymTensor) -> Self {
        let mut v = Self::zero(f.dim());
        v.insert(f);
        v
    }

    /// The coordinate Z_i = I_1(e_i).
    pub fn coordinate(dim: usize, i: usize) -> Self {
        Self::from_kernel(SymTensor::basis(dim, i))
    }

    pub fn with_max_order(mut self, max_order: usize) -> Self {
        self.max_order = max_order;
        self
    }

    fn insert(&mut self, f: SymTensor) {
        let n = f.order();
        if n == 0 {
            self.constant += f.get(&[]);
        } else if let Some(g) = self.kernels.get_mut(&n) {
            *g = g.axpy(1.0, &f).expect("orders match");
            if g.is_zero() {
                self.kernels.remove(&n);
            }
        } else if !f.is_zero() {
            self.kernels.insert(n, f);
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn kernel(&self, n: usize) -> Option<&SymTensor> {
        self.kernels.get(&n)
    }

    pub fn kernels(&self) -> impl Iterator<Item = (usize, &SymTensor)> {
        self.kernels.iter().map(|(&n, f)| (n, f))
    }

    /// Highest chaos order present (0 for a constant).
    pub fn max_chaos_order(&self) -> usize {
        self.kernels.keys().next_back().copied().unwrap_or(0)
    }

    /// Some(q) if the variable is a centered element of the q-th chaos.
    pub fn pure_order(&self) -> Option<usize> {
        if self.constant != 0.0 || self.kernels.len() != 1 {
            return None;
        }
        self.kernels.keys().next().copied()
    }

    /// Eigenvalues zeta of the kernel for F in the second chaos, sorted
    /// decreasingly, so that F = sum zeta_i (Z_i'^2 - 1) in rotated coordinates.
    pub fn second_chaos_weights(&self) -> Option<Vec<f64>> {
        if self.pure_order() != Some(2) {
            return None;
        }
        let d = self.dim;
        let mut m = nalgebra::DMatrix::<f64>::zeros(d, d);
        for (idx, v) in self.kernels[&2].entries() {
            let s = idx.as_slice();
            let (i, j) = (s[0] as usize, s[1] as usize);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        let mut w: Vec<f64> = nalgebra::SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
        w.sort_by(|a, b| b.total_cmp(a));
        Some(w)
    }

    fn check_dim(&self, other: &ChaosVector) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch(self.dim, other.dim));
        }
        Ok(())
    }

    /// self + s * other.
    pub fn axpy(&self, s: f64, other: &ChaosVector) -> Result<ChaosVector> {
        self.check_dim(other)?;
        let mut out = self.clone();
        out.max_order = self.max_order.max(other.max_order);
        out.constant += s * other.constant;
        for (_, g) in other.kernels() {
            out.insert(g.scale(s));
        }
        Ok(out)
    }

    pub fn add(&self, other: &ChaosVector) -> Result<ChaosVector> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &ChaosVector) -> Result<ChaosVector> {
        self.axpy(-1.0, other)
    }

    pub fn scale(&self, s: f64) -> ChaosVector {
        let mut out = ChaosVector::zero(self.dim).with_max_order(self.max_order);
        out.constant = s * self.constant;
        for (_, f) in self.kernels() {
            out.insert(f.scale(s));
        }
        out
    }

    pub fn add_constant(&self, c: f64) -> ChaosVector {
        let mut out = self.clone();
        out.constant += c;
        out
    }

    /// Kernels including the constant as an order-0 tensor.
    fn all_terms(&self) -> Vec<(usize, SymTensor)> {
        let mut v = Vec::with_capacity(self.kernels.len() + 1);
        if self.constant != 0.0 {
            v.push((0, SymTensor::scalar(self.dim, self.constant)));
        }
        v.extend(self.kernels.iter().map(|(&n, f)| (n, f.clone())));
        v
    }

    /// Exact product via the product formula.
    pub fn multiply(&self, other: &ChaosVector) -> Result<ChaosVector> {
        self.check_dim(other)?;
        let budget = self.max_order.max(other.max_order);
        let needed = self.max_chaos_order() + other.max_chaos_order();
        if needed > budget {
            return Err(Error::OrderBudget { needed, budget });
        }
        let mut out = ChaosVector::zero(self.dim).with_max_order(budget);
        for (n, f) in self.all_terms() {
            for (m, g) in other.all_terms() {
                for r in 0..=n.min(m) {
                    let c = factorial(r) * binomial(n, r) * binomial(m, r);
                    out.insert(f.contract_sym(&g, r)?.scale(c));
                }
            }
        }
        Ok(out)
    }

    pub fn expectation(&self) -> f64 {
        self.constant
    }

    /// E[F G] by orthogonality.
    pub fn inner(&self, other: &ChaosVector) -> f64 {
        let mut s = self.constant * other.constant;
        for (n, f) in self.kernels() {
            if let Some(g) = other.kernel(n) {
                s += factorial(n) * f.inner(g);
            }
        }
        s
    }

    pub fn second_moment(&self) -> f64 {
        self.inner(self)
    }

    pub fn variance(&self) -> f64 {
        self.second_moment() - self.constant * self.constant
    }

    /// E[F^p]; the product needs p times the top chaos order within the budget.
    pub fn moment(&self, p: usize) -> Result<f64> {
        let needed = p * self.max_chaos_order();
        if needed > self.max_order {
            return Err(Error::OrderBudget { needed, budget: self.max_order });
        }
        match p {
            0 => Ok(1.0),
            1 => Ok(self.expectation()),
            _ => {
                let lo = self.power(p / 2)?;
                let hi = if p % 2 == 0 { lo.clone() } else { lo.multiply(self)? };
                Ok(lo.inner(&hi))
            }
        }
    }

    pub fn power(&self, p: usize) -> Result<ChaosVector> {
        let mut acc = ChaosVector::constant_value(self.dim, 1.0).with_max_order(self.max_order);
        for _ in 0..p {
            acc = acc.multiply(self)?;
        }
        Ok(acc)
    }

    /// DF as a field of d components.
    pub fn malliavin_d(&self) -> ChaosField {
        let components = (0..self.dim)
            .map(|j| self.derivative_along(&MultiIndex::new(vec![j as u16])))
            .collect();
        ChaosField { components }
    }

    /// The component of D^k F indexed by the multiset `a` (k = a.order()).
    pub fn derivative_along(&self, a: &MultiIndex) -> ChaosVector {
        let k = a.order();
        let mut out = ChaosVector::zero(self.dim).with_max_order(self.max_order);
        if k == 0 {
            return self.clone();
        }
        for (n, f) in self.kernels() {
            if n >= k {
                out.insert(f.slice(a).scale(falling(n, k)));
            }
        }
        out
    }

    pub fn generator_l(&self) -> ChaosVector {
        let mut out = ChaosVector::zero(self.dim).with_max_order(self.max_order);
        for (n, f) in self.kernels() {
            out.insert(f.scale(-(n as f64)));
        }
        out
    }

    /// Pseudo-inverse of L applied to F - E[F].
    pub fn inverse_l(&self) -> ChaosVector {
        let mut out = ChaosVector::zero(self.dim).with_max_order(self.max_order);
        for (n, f) in self.kernels() {
            out.insert(f.scale(-1.0 / n as f64));
        }
        out
    }

    /// Largest absolute kernel coordinate including the constant.
    pub fn max_abs(&self) -> f64 {
        self.kernels().fold(self.constant.abs(), |m, (_, f)| m.max(f.max_abs()))
    }

    /// Sample-path value at z.
    pub fn eval(&self, z: &[f64]) -> f64 {
        self.compile().value(z, &mut EvalScratch::default())
    }

    /// Value and Taylor jet of order k at z.
    pub fn eval_jet(&self, z: &[f64], k: usize) -> Result<Jet> {
        if k > 4 {
            return Err(Error::invalid("jets are limited to order 4"));
        }
        let space = JetSpace::new(self.dim, k);
        let program = JetProgram::new(&self.compile(), &space);
        Ok(program.eval(&space, z))
    }

    pub fn compile(&self) -> CompiledChaos {
        let mut terms = Vec::new();
        let mut max_deg = 0;
        for (_, f) in self.kernels() {
            for (m, v) in f.entries() {
                let factors: Vec<(usize, usize)> =
                    m.runs().into_iter().map(|(l, c)| (l as usize, c)).collect();
                max_deg = factors.iter().fold(max_deg, |a, &(_, c)| a.max(c));
                terms.push(Term { coef: m.mult() * v, factors });
            }
        }
        CompiledChaos { dim: self.dim, constant: self.constant, terms, max_deg }
    }
}

/// Pointwise-evaluable form: sum of coef * prod He_{a}(z_i).
#[derive(Clone, Debug)]
pub struct CompiledChaos {
    pub(crate) dim: usize,
    pub(crate) constant: f64,
    pub(crate) terms: Vec<Term>,
    pub(crate) max_deg: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct Term {
    pub coef: f64,
    pub factors: Vec<(usize, usize)>,
}

/// Reusable buffers for pointwise evaluation.
#[derive(Default, Clone, Debug)]
pub struct EvalScratch {
    pub(crate) table: Vec<f64>,
}

impl EvalScratch {
    pub(crate) fn fill(&mut self, z: &[f64], max_deg: usize) {
        let w = max_deg + 1;
        self.table.resize(z.len() * w, 0.0);
        for (i, &zi) in z.iter().enumerate() {
            hermite_table(zi, &mut self.table[i * w..(i + 1) * w]);
        }
    }

    #[inline]
    pub(crate) fn he(&self, max_deg: usize, coord: usize, deg: usize) -> f64 {
        self.table[coord * (max_deg + 1) + deg]
    }
}

impl CompiledChaos {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, z: &[f64], s: &mut EvalScratch) -> f64 {
        s.fill(z, self.max_deg);
        let mut acc = self.constant;
        for t in &self.terms {
            let mut p = t.coef;
            for &(c, a) in &t.factors {
                p *= s.he(self.max_deg, c, a);
            }
            acc += p;
        }
        acc
    }

    /// Value, gradient and dense row-major Hessian at z.
    pub fn value_grad_hess(&self, z: &[f64], s: &mut EvalScratch, grad: &mut [f64], hess: &mut [f64]) -> f64 {
        let d = self.dim;
        let md = self.max_deg;
        s.fill(z, md);
        grad.iter_mut().for_each(|g| *g = 0.0);
        hess.iter_mut().for_each(|h| *h = 0.0);
        let mut acc = self.constant;
        let mut v = [0.0f64; 16];
        let mut dv = [0.0f64; 16];
        let mut ddv = [0.0f64; 16];
        for t in &self.terms {
            let nf = t.factors.len();
            for (i, &(c, a)) in t.factors.iter().enumerate() {
                v[i] = s.he(md, c, a);
                dv[i] = if a >= 1 { a as f64 * s.he(md, c, a - 1) } else { 0.0 };
                ddv[i] = if a >= 2 { (a * (a - 1)) as f64 * s.he(md, c, a - 2) } else { 0.0 };
            }
            let mut full = t.coef;
            for x in &v[..nf] {
                full *= x;
            }
            acc += full;
            for i in 0..nf {
                let ci = t.factors[i].0;
                let mut gi = t.coef * dv[i];
                for (j, x) in v[..nf].iter().enumerate() {
                    if j != i {
                        gi *= x;
                    }
                }
                grad[ci] += gi;
                let mut hii = t.coef * ddv[i];
                for (j, x) in v[..nf].iter().enumerate() {
                    if j != i {
                        hii *= x;
                    }
                }
                hess[ci * d + ci] += hii;
                for j in (i + 1)..nf {
                    let cj = t.factors[j].0;
                    let mut hij = t.coef * dv[i] * dv[j];
                    for (l, x) in v[..nf].iter().enumerate() {
                        if l != i && l != j {
                            hij *= x;
                        }
                    }
                    hess[ci * d + cj] += hij;
                    hess[cj * d + ci] += hij;
                }
            }
        }
        acc
    }
}

/// An H-valued functional in coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChaosField {
    components: Vec<ChaosVector>,
}

impl ChaosField {
    pub fn new(components: Vec<ChaosVector>) -> Result<Self> {
        let d = components.len();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::invalid("field must have one component per dimension"));
        }
        Ok(ChaosField { components })
    }

    /// The deterministic field e_i.
    pub fn basis(dim: usize, i: usize) -> Self {
        let components = (0..dim)
            .map(|j| ChaosVector::constant_value(dim, if i == j { 1.0 } else { 0.0 }))
            .collect();
        ChaosField { components }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[ChaosVector] {
        &self.components
    }

    pub fn component(&self, j: usize) -> &ChaosVector {
        &self.components[j]
    }

    pub fn axpy(&self, s: f64, other: &ChaosField) -> Result<ChaosField> {
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.axpy(s, b))
            .collect::<Result<_>>()?;
        Ok(ChaosField { components })
    }

    pub fn scale(&self, s: f64) -> ChaosField {
        ChaosField { components: self.components.iter().map(|c| c.scale(s)).collect() }
    }

    /// Pointwise product G u.
    pub fn times(&self, g: &ChaosVector) -> Result<ChaosField> {
        let components = self.components.iter().map(|c| c.multiply(g)).collect::<Result<_>>()?;
        Ok(ChaosField { components })
    }

    /// Pointwise inner product <u, v> as a chaos variable.
    pub fn inner(&self, other: &ChaosField) -> Result<ChaosVector> {
        let mut acc = ChaosVector::zero(self.dim());
        for (a, b) in self.components.iter().zip(&other.components) {
            acc = acc.add(&a.multiply(b)?)?;
        }
        Ok(acc)
    }

    pub fn norm_sq(&self) -> Result<ChaosVector> {
        self.inner(self)
    }

    /// E ||u||^2.
    pub fn expected_norm_sq(&self) -> f64 {
        self.components.iter().map(|c| c.second_moment()).sum()
    }

    /// Skorokhod integral of a polynomial field.
    pub fn divergence(&self) -> Result<ChaosVector> {
        let d = self.dim();
        let mut out = ChaosVector::zero(d);
        for (j, u) in self.components.iter().enumerate() {
            out.max_order = out.max_order.max(u.max_order);
            let e = SymTensor::basis(d, j);
            for (n, g) in u.all_terms() {
                if n + 1 > u.max_order {
                    return Err(Error::OrderBudget { needed: n + 1, budget: u.max_order });
                }
                out.insert(e.tensor_product(&g)?);
            }
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.components.iter().fold(0.0, |m, c| m.max(c.max_abs()))
    }
}

/// Gamma(F, G) = <DF, DG>.
pub fn carre_du_champ(f: &ChaosVector, g: &ChaosVector) -> Result<ChaosVector> {
    f.malliavin_d().inner(&g.malliavin_d())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_chaos(rng: &mut ChaCha8Rng, dim: usize, orders: &[usize]) -> ChaosVector {
        let mut f = ChaosVector::constant_value(dim, rng.gen_range(-1.0..1.0));
        for &n in orders {
            f = f.add(&ChaosVector::from_kernel(SymTensor::random(n, dim, rng))).unwrap();
        }
        f
    }

    fn second_chaos(zeta: &[f64]) -> ChaosVector {
        ChaosVector::from_kernel(SymTensor::diagonal(zeta))
    }

    #[test]
    fn coordinate_square() {
        let z = ChaosVector::coordinate(2, 0);
        let sq = z.multiply(&z).unwrap();
        assert_eq!(sq.constant(), 1.0);
        assert_eq!(sq.kernel(2).unwrap().get(&[0, 0]), 1.0);
        assert_eq!(sq.eval(&[3.0, 0.0]), 9.0);
    }

    #[test]
    fn second_chaos_moments() {
        let f = second_chaos(&[0.5, 0.5]);
        assert!((f.moment(2).unwrap() - 1.0).abs() < 1e-14);
        let zeta = [0.7, 0.4, 0.2];
        let f = second_chaos(&zeta);
        let s3: f64 = zeta.iter().map(|z| z * z * z).sum();
        let s4: f64 = zeta.iter().map(|z| z.powi(4)).sum();
        let s2: f64 = zeta.iter().map(|z| z * z).sum();
        assert!((f.moment(3).unwrap() - 8.0 * s3).abs() < 1e-12);
        assert!((f.moment(4).unwrap() - (48.0 * s4 + 12.0 * s2 * s2)).abs() < 1e-12);
        let tight = second_chaos(&[0.5; 12]);
        assert!((tight.moment(3).unwrap() - 12.0).abs() < 1e-10);
        assert!((tight.moment(4).unwrap() - 144.0).abs() < 1e-10);
    }

    #[test]
    fn moment_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = ChaosVector::from_kernel(SymTensor::random(4, 2, &mut rng));
        assert!(f.moment(4).is_ok());
        let g = f.clone().with_max_order(12);
        assert!(matches!(g.moment(4), Err(Error::OrderBudget { needed: 16, budget: 12 })));
    }

    #[test]
    fn isometry_and_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for q in 2..=4 {
            let f = SymTensor::random(q, 3, &mut rng);
            let g = SymTensor::random(q, 3, &mut rng);
            let fv = ChaosVector::from_kernel(f.clone());
            let gv = ChaosVector::from_kernel(g.clone());
            let exact = fv.multiply(&fv).unwrap().expectation();
            assert!((exact - factorial(q) * f.norm_sq()).abs() < 1e-10 * exact.abs().max(1.0));
            let cross = fv.multiply(&gv).unwrap().expectation();
            assert!((cross - factorial(q) * f.inner(&g)).abs() < 1e-10);
            let h = ChaosVector::from_kernel(SymTensor::random(q + 1, 3, &mut rng));
            assert!(fv.multiply(&h).unwrap().expectation().abs() < 1e-12);
        }
    }

    #[test]
    fn multiply_matches_pointwise_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_chaos(&mut rng, 3, &[1, 2, 3]);
        let g = random_chaos(&mut rng, 3, &[2, 4]);
        let fg = f.multiply(&g).unwrap();
        let (cf, cg, cfg) = (f.compile(), g.compile(), fg.compile());
        let mut s = EvalScratch::default();
        for _ in 0..1000 {
            let z: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.5..2.5)).collect();
            let lhs = cfg.value(&z, &mut s);
            let rhs = cf.value(&z, &mut s) * cg.value(&z, &mut s);
            assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn derivative_of_diagonal() {
        let f = second_chaos(&[0.6, 0.3]);
        let df = f.malliavin_d();
        assert_eq!(df.component(0), &ChaosVector::coordinate(2, 0).scale(1.2));
        assert!((df.expected_norm_sq() - 4.0 * (0.36 + 0.09)).abs() < 1e-14);
        let c = ChaosVector::constant_value(2, 3.0).malliavin_d();
        assert!(c.components().iter().all(|x| x.max_abs() == 0.0));
    }

    #[test]
    fn chain_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let f = ChaosVector::from_kernel(SymTensor::random(2, 3, &mut rng));
            let lhs = f.multiply(&f).unwrap().malliavin_d();
            let rhs = f.malliavin_d().times(&f).unwrap().scale(2.0);
            assert!(lhs.axpy(-1.0, &rhs).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn divergence_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = ChaosVector::from_kernel(SymTensor::random(2, 3, &mut rng));
        let d = f.malliavin_d().divergence().unwrap();
        assert!(d.sub(&f.scale(2.0)).unwrap().max_abs() < 1e-12);
        let e0 = ChaosField::basis(3, 0).divergence().unwrap();
        assert_eq!(e0, ChaosVector::coordinate(3, 0));
    }

    #[test]
    fn divergence_matches_product_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = 3;
        let u = ChaosField::new((0..d).map(|_| random_chaos(&mut rng, d, &[1, 2])).collect()).unwrap();
        let mut expected = ChaosVector::zero(d);
        for j in 0..d {
            let zj = ChaosVector::coordinate(d, j);
            let term = zj.multiply(u.component(j)).unwrap();
            let dj = u.component(j).malliavin_d().component(j).clone();
            expected = expected.add(&term.sub(&dj).unwrap()).unwrap();
        }
        assert!(u.divergence().unwrap().sub(&expected).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn duality() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = 3;
        for _ in 0..50 {
            let f = random_chaos(&mut rng, d, &[1, 2, 3]);
            let u = ChaosField::new((0..d).map(|_| random_chaos(&mut rng, d, &[1, 2])).collect()).unwrap();
            let lhs = f.inner(&u.divergence().unwrap());
            let rhs = f.malliavin_d().inner(&u).unwrap().expectation();
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn generator_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f3 = ChaosVector::from_kernel(SymTensor::random(3, 3, &mut rng));
        assert_eq!(f3.generator_l(), f3.scale(-3.0));
        let f = random_chaos(&mut rng, 3, &[1, 2, 3, 4]);
        let back = f.inverse_l().generator_l();
        assert!(back.sub(&f.add_constant(-f.expectation())).unwrap().max_abs() < 1e-12);
        let minus_delta_d = f.malliavin_d().divergence().unwrap().scale(-1.0);
        assert!(minus_delta_d.sub(&f.generator_l()).unwrap().max_abs() < 1e-12);
        let q4 = ChaosVector::from_kernel(SymTensor::random(4, 3, &mut rng));
        let lhs = q4.inverse_l().malliavin_d().scale(-1.0);
        let rhs = q4.malliavin_d().scale(0.25);
        assert!(lhs.axpy(-1.0, &rhs).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn carre_du_champ_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = random_chaos(&mut rng, 3, &[1, 2, 3]);
        let g = random_chaos(&mut rng, 3, &[2, 3]);
        let lhs = carre_du_champ(&f, &g).unwrap().scale(2.0);
        let rhs = f
            .multiply(&g)
            .unwrap()
            .generator_l()
            .sub(&f.multiply(&g.generator_l()).unwrap())
            .unwrap()
            .sub(&g.multiply(&f.generator_l()).unwrap())
            .unwrap();
        assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn grad_hess_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let f = random_chaos(&mut rng, 3, &[1, 2, 3, 4]);
        let c = f.compile();
        let mut s = EvalScratch::default();
        let z = [0.3, -1.1, 0.8];
        let (mut g, mut h) = (vec![0.0; 3], vec![0.0; 9]);
        let v = c.value_grad_hess(&z, &mut s, &mut g, &mut h);
        assert!((v - f.eval(&z)).abs() < 1e-12);
        let eps = 1e-5;
        for i in 0..3 {
            let mut zp = z;
            let mut zm = z;
            zp[i] += eps;
            zm[i] -= eps;
            let fd = (f.eval(&zp) - f.eval(&zm)) / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-6 * g[i].abs().max(1.0));
            let (mut gp, mut gm, mut hh) = (vec![0.0; 3], vec![0.0; 3], vec![0.0; 9]);
            c.value_grad_hess(&zp, &mut s, &mut gp, &mut hh);
            c.value_grad_hess(&zm, &mut s, &mut gm, &mut hh);
            for j in 0..3 {
                let fd = (gp[j] - gm[j]) / (2.0 * eps);
                assert!((fd - h[i * 3 + j]).abs() < 1e-6 * h[i * 3 + j].abs().max(1.0));
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = random_chaos(&mut rng, 3, &[1, 2, 4]);
        let s = serde_json::to_string(&f).unwrap();
        let back: ChaosVector = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
        assert!(serde_json::from_str::<ChaosVector>(r#"{"dim":2,"extra":1}"#).is_err());
    }
}
