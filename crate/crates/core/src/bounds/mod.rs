//! Exact contraction expansions behind the fourth-moment density bounds and
//! the assembly of the bounds themselves.

mod assemble;

use std::collections::BTreeMap;


use crate::chaos::{ChaosField, ChaosVector};
use crate::error::{Error, Result};
use crate::hermite::{binomial, factorial, multisets, MultiIndex, SymTensor};

pub use assemble::{
    assemble_derivative_bound, assemble_fourth_moment_bound, assemble_general_bound, BoundKind, BoundReport, BoundRow,
    GeneralTerms, MixedSpec, MomentValue, NegativeMomentCheck,
};

/// Tolerance for the requirement E[F^2] = alpha.
pub const ALPHA_TOL: f64 = 1e-9;

pub(crate) fn require_even(q: usize) -> Result<()> {
    if q < 2 || q % 2 == 1 {
        return Err(Error::refused(format!(
            "chaos order {q} is not supported: the bounds need an even order q >= 2"
        )));
    }
    Ok(())
}

pub(crate) fn require_alpha(second_moment: f64, alpha: f64) -> Result<()> {
    if (second_moment - alpha).abs() > ALPHA_TOL * alpha.abs().max(1.0) {
        return Err(Error::domain(format!("E[F^2] = {second_moment} does not match alpha = {alpha}")));
    }
    Ok(())
}

/// lambda(l, m) = (q-1)! (q/2-l+1)! (q/2-m+1)! / ((q-l-m+2)! ((q/2)!)^2).
pub fn lambda_const(l: usize, m: usize, q: usize) -> Result<f64> {
    require_even(q)?;
    let h = q / 2;
    if !(1 <= m && m <= l && l <= h + 1 && l + m >= 3) {
        return Err(Error::domain(format!("lambda({l}, {m}) needs 1 <= m <= l <= q/2 + 1 and l + m >= 3 (q = {q})")));
    }
    Ok(factorial(q - 1) * factorial(h + 1 - l) * factorial(h + 1 - m) / (factorial(q + 2 - l - m) * factorial(h).powi(2)))
}

/// tau(k, l, r) = q!^2 / ((q-l)! (q-k)!) r! C(q-k, r) C(q-l, r).
pub fn tau_const(k: usize, l: usize, r: usize, q: usize) -> Result<f64> {
    require_even(q)?;
    if !(1 <= l && l <= k && k <= q / 2 + 1 && k + l >= 3) || r > q - k {
        return Err(Error::domain(format!("tau({k}, {l}, {r}) is outside its range for q = {q}")));
    }
    Ok(factorial(q).powi(2) / (factorial(q - l) * factorial(q - k))
        * factorial(r)
        * binomial(q - k, r)
        * binomial(q - l, r))
}

/// q (q/2-1)! C(q-1, q/2-1)^2, the coefficient of the middle contraction.
pub fn middle_const(q: usize) -> f64 {
    q as f64 * factorial(q / 2 - 1) * binomial(q - 1, q / 2 - 1).powi(2)
}

fn pure(f: &ChaosVector) -> Result<(usize, &SymTensor)> {
    let q = f
        .pure_order()
        .ok_or_else(|| Error::domain("expected a centered variable in a single chaos"))?;
    Ok((q, f.kernel(q).expect("pure order has a kernel")))
}

/// Theta = ||DF||^2 - q (F + alpha) for F in the q-th chaos.
pub fn theta(f: &ChaosVector, alpha: f64) -> Result<ChaosVector> {
    let (q, _) = pure(f)?;
    let w = f.malliavin_d().norm_sq()?;
    w.sub(&f.add_constant(alpha).scale(q as f64))
}

/// E[F^4] - 6 E[F^3] + 6 (1 - alpha) alpha + 3 alpha^2 from exact moments.
pub fn fourth_moment_combo(f: &ChaosVector, alpha: f64) -> Result<f64> {
    require_alpha(f.second_moment(), alpha)?;
    let m3 = f.moment(3)?;
    let m4 = f.moment(4)?;
    Ok(m4 - 6.0 * m3 + 6.0 * (1.0 - alpha) * alpha + 3.0 * alpha * alpha)
}

fn middle_residual(f: &SymTensor, q: usize) -> Result<SymTensor> {
    f.contract_sym(f, q / 2)?.scale(middle_const(q)).axpy(-1.0, f)
}

/// Expansion of E[Theta^2] over symmetrized self-contractions of the kernel.
pub fn theta_sq_expansion(f: &SymTensor, alpha: f64) -> Result<f64> {
    let q = f.order();
    require_even(q)?;
    require_alpha(factorial(q) * f.norm_sq(), alpha)?;
    let qf = q as f64;
    let mut total = 0.0;
    for r in (0..=q - 2).filter(|&r| r != q / 2 - 1) {
        let c = qf.powi(4) * factorial(r).powi(2) * binomial(q - 1, r).powi(4) * factorial(2 * q - 2 - 2 * r);
        total += c * f.contract_sym(f, r + 1)?.norm_sq();
    }
    total += factorial(q - 1) * qf.powi(3) * middle_residual(f, q)?.norm_sq();
    Ok(total)
}

/// Expansion of E||2 D^2F (x)_1 DF - q DF||^2.
pub fn lambda21_expansion(f: &SymTensor) -> Result<f64> {
    let q = f.order();
    require_even(q)?;
    let qf = q as f64;
    let mut total = 0.0;
    for r in (0..=q - 2).filter(|&r| r != q / 2 - 1) {
        let ratio = (q - r - 1) as f64 / (qf - 1.0);
        let c = 4.0
            * qf.powi(4)
            * (qf - 1.0).powi(2)
            * factorial(r).powi(2)
            * ratio * ratio
            * binomial(q - 1, r).powi(4)
            * factorial(2 * q - 3 - 2 * r);
        total += c * f.contract_sym(f, r + 1)?.norm_sq();
    }
    total += factorial(q - 1) * qf.powi(4) * middle_residual(f, q)?.norm_sq();
    Ok(total)
}

/// E||2 D^2F (x)_1 DF - q DF||^2 computed in the engine.
pub fn lambda21_direct(f: &ChaosVector) -> Result<f64> {
    let (q, _) = pure(f)?;
    let d = f.dim();
    let df = f.malliavin_d();
    let mut total = 0.0;
    for j in 0..d {
        let mut x = df.component(j).scale(-(q as f64));
        for c in 0..d {
            let d2 = f.derivative_along(&MultiIndex::new(vec![j as u16, c as u16]));
            x = x.axpy(2.0, &d2.multiply(df.component(c))?)?;
        }
        total += x.second_moment();
    }
    Ok(total)
}

/// Smallest C with (2 D^2F (x)_1 DF - q DF expansion) <= C * (Theta expansion), termwise.
pub fn c1_constant(q: usize) -> Result<f64> {
    require_even(q)?;
    let qf = q as f64;
    let mut best = factorial(q - 1) * qf.powi(4) / (factorial(q - 1) * qf.powi(3));
    for r in (0..=q - 2).filter(|&r| r != q / 2 - 1) {
        let ratio = (q - r - 1) as f64 / (qf - 1.0);
        let num = 4.0 * qf.powi(4) * (qf - 1.0).powi(2) * ratio * ratio * factorial(2 * q - 3 - 2 * r);
        let den = qf.powi(4) * factorial(2 * q - 2 - 2 * r);
        best = best.max(num / den);
    }
    Ok(best)
}

fn check_kl(k: usize, l: usize, q: usize) -> Result<()> {
    require_even(q)?;
    if !(1 <= l && l <= k && k <= q / 2 + 1 && k + l >= 3) {
        return Err(Error::domain(format!("(k, l) = ({k}, {l}) needs 1 <= l <= k <= q/2 + 1 and k + l >= 3 (q = {q})")));
    }
    Ok(())
}

/// The random tensor Lambda(k, l) = lambda(k, l) D^kF (x)_1 D^lF - D^{k+l-2}F.
///
/// Components are indexed by a pair (A, B) of multisets of sizes k-1 and l-1.
#[derive(Clone, Debug)]
pub struct LambdaField {
    k: usize,
    l: usize,
    dim: usize,
    components: BTreeMap<(MultiIndex, MultiIndex), ChaosVector>,
}

impl LambdaField {
    pub fn new(f: &ChaosVector, k: usize, l: usize) -> Result<Self> {
        let (q, _) = pure(f)?;
        check_kl(k, l, q)?;
        let lam = lambda_const(k, l, q)?;
        let d = f.dim();
        let mut components = BTreeMap::new();
        for a in multisets(d, k - 1) {
            for b in multisets(d, l - 1) {
                let mut acc = f.derivative_along(&a.merge(&b)).scale(-1.0);
                for c in 0..d as u16 {
                    let left = f.derivative_along(&a.with(c));
                    let right = f.derivative_along(&b.with(c));
                    acc = acc.axpy(lam, &left.multiply(&right)?)?;
                }
                components.insert((a.clone(), b), acc);
            }
        }
        Ok(LambdaField { k, l, dim: d, components })
    }

    pub fn orders(&self) -> (usize, usize) {
        (self.k, self.l)
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Number of multisets of order k + l - 2 over the dimension.
    pub fn symmetric_component_count(&self) -> usize {
        binomial(self.dim + self.k + self.l - 3, self.k + self.l - 2).round() as usize
    }

    pub fn component(&self, a: &MultiIndex, b: &MultiIndex) -> Option<&ChaosVector> {
        self.components.get(&(a.clone(), b.clone()))
    }

    pub fn components(&self) -> impl Iterator<Item = (&(MultiIndex, MultiIndex), &ChaosVector)> {
        self.components.iter()
    }

    /// Largest |Lambda_{A,B} - Lambda_{A',B'}| over index pairs with A+B = A'+B'.
    pub fn asymmetry(&self) -> Result<f64> {
        let mut by_union: BTreeMap<MultiIndex, &ChaosVector> = BTreeMap::new();
        let mut worst: f64 = 0.0;
        for ((a, b), v) in &self.components {
            let u = a.merge(b);
            match by_union.get(&u) {
                Some(first) => worst = worst.max(v.sub(first)?.max_abs()),
                None => {
                    by_union.insert(u, v);
                }
            }
        }
        Ok(worst)
    }

    /// E||Lambda||^2 summing over ordered index tuples.
    pub fn expected_norm_sq(&self) -> f64 {
        self.components.iter().map(|((a, b), v)| a.mult() * b.mult() * v.second_moment()).sum()
    }
}

/// E||Lambda(k, l)||^2 computed in the engine.
pub fn lambda_direct(f: &ChaosVector, k: usize, l: usize) -> Result<f64> {
    Ok(LambdaField::new(f, k, l)?.expected_norm_sq())
}

/// Expansion of E||Lambda(k, l)||^2 over contractions of kernel slices.
pub fn lambda_expansion(f: &SymTensor, k: usize, l: usize) -> Result<f64> {
    let q = f.order();
    check_kl(k, l, q)?;
    let lam = lambda_const(k, l, q)?;
    let d = f.dim();
    let slices_a: Vec<(MultiIndex, SymTensor)> = multisets(d, k - 1).into_iter().map(|a| {
        let s = f.slice(&a);
        (a, s)
    }).collect();
    let slices_b: Vec<(MultiIndex, SymTensor)> = multisets(d, l - 1).into_iter().map(|b| {
        let s = f.slice(&b);
        (b, s)
    }).collect();
    let cm = middle_const(q);
    let mut total = 0.0;
    for r in (0..=q - k).filter(|&r| r != q / 2 - 1) {
        let coef = (lam * tau_const(k, l, r, q)?).powi(2) * factorial(2 * q - k - l - 2 * r);
        let mut n = 0.0;
        for (a, fa) in &slices_a {
            for (b, fb) in &slices_b {
                n += a.mult() * b.mult() * fa.contract_sym(fb, r + 1)?.norm_sq();
            }
        }
        total += coef * n;
    }
    let mut mid = 0.0;
    for (a, fa) in &slices_a {
        for (b, fb) in &slices_b {
            let t = fa.contract_sym(fb, q / 2)?.scale(cm).axpy(-1.0, &f.slice(&a.merge(b)))?;
            mid += a.mult() * b.mult() * t.norm_sq();
        }
    }
    total += factorial(q).powi(2) / factorial(q + 2 - k - l) * mid;
    Ok(total)
}

/// Coefficient-ratio constant comparing the Lambda(k, l) expansion with the Theta expansion.
pub fn lambda_domination_const(q: usize, k: usize, l: usize) -> Result<f64> {
    check_kl(k, l, q)?;
    let qf = q as f64;
    let lam = lambda_const(k, l, q)?;
    let mut best = (factorial(q).powi(2) / factorial(q + 2 - k - l)) / (factorial(q - 1) * qf.powi(3));
    for r in (0..=q - k).filter(|&r| r != q / 2 - 1) {
        let num = (lam * tau_const(k, l, r, q)?).powi(2) * factorial(2 * q - k - l - 2 * r);
        let den = qf.powi(4) * factorial(r).powi(2) * binomial(q - 1, r).powi(4) * factorial(2 * q - 2 - 2 * r);
        best = best.max(num / den);
    }
    Ok(best)
}

/// max |D Theta - q Lambda(2, 1)| over kernel coordinates.
pub fn dtheta_identity_gap(f: &ChaosVector, alpha: f64) -> Result<f64> {
    let (q, _) = pure(f)?;
    require_even(q)?;
    let dtheta: ChaosField = theta(f, alpha)?.malliavin_d();
    let lam = LambdaField::new(f, 2, 1)?;
    let mut gap: f64 = 0.0;
    for ((a, _), v) in lam.components() {
        let j = a.as_slice()[0] as usize;
        gap = gap.max(dtheta.component(j).sub(&v.scale(q as f64))?.max_abs());
    }
    Ok(gap)
}

/// D Theta = q Lambda(2, 1) up to rounding relative to the kernel scale.
pub fn dtheta_identity_check(f: &ChaosVector, alpha: f64) -> Result<bool> {
    let scale = f.max_abs().max(1.0).powi(2);
    Ok(dtheta_identity_gap(f, alpha)? <= 1e-10 * scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn normalized(q: usize, d: usize, seed: u64) -> (ChaosVector, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = SymTensor::random(q, d, &mut rng);
        let f = f.scale(1.0 / (factorial(q) * f.norm_sq()).sqrt() * 1.3);
        let v = ChaosVector::from_kernel(f);
        let alpha = v.second_moment();
        (v, alpha)
    }

    #[test]
    fn lambda_values() {
        assert_eq!(lambda_const(2, 1, 2).unwrap(), 1.0);
        assert!((lambda_const(2, 1, 4).unwrap() - 0.5).abs() < 1e-15);
        assert!(lambda_const(1, 1, 4).is_err());
        assert!(lambda_const(2, 1, 3).is_err());
    }

    #[test]
    fn lambda_recursion() {
        for q in (2..=8).step_by(2) {
            let h = q / 2;
            for k in 1..=h + 1 {
                for l in 1..=k {
                    if k + l < 3 || k + 1 > h + 1 {
                        continue;
                    }
                    let lhs = 1.0 / lambda_const(k + 1, l, q).unwrap()
                        + if l + 1 <= k { 1.0 / lambda_const(k, l + 1, q).unwrap() } else { 1.0 / lambda_const(l + 1, k, q).unwrap() };
                    let rhs = 1.0 / lambda_const(k, l, q).unwrap();
                    assert!((lhs - rhs).abs() < 1e-12 * rhs, "q={q} k={k} l={l}");
                }
            }
        }
    }

    #[test]
    fn tau_lambda_middle_identity() {
        for q in [2usize, 4, 6] {
            for k in 2..=q / 2 + 1 {
                for l in 1..=k {
                    if k + l < 3 {
                        continue;
                    }
                    let lhs = tau_const(k, l, q / 2 - 1, q).unwrap() * lambda_const(k, l, q).unwrap();
                    let rhs = factorial(q) * middle_const(q) / factorial(q + 2 - k - l);
                    assert!((lhs - rhs).abs() < 1e-9 * rhs, "q={q} k={k} l={l}");
                }
            }
        }
    }

    #[test]
    fn diagonal_second_chaos_values() {
        let zeta = [0.7, 0.5, 0.45, 0.2];
        let f = ChaosVector::from_kernel(SymTensor::diagonal(&zeta));
        let alpha = f.second_moment();
        let s: f64 = zeta.iter().map(|z| (2.0 * z * z - z).powi(2)).sum();
        let kernel = f.kernel(2).unwrap();
        assert!((theta_sq_expansion(kernel, alpha).unwrap() - 8.0 * s).abs() < 1e-12);
        assert!((theta(&f, alpha).unwrap().second_moment() - 8.0 * s).abs() < 1e-12);
        assert!((lambda21_expansion(kernel).unwrap() - 16.0 * s).abs() < 1e-12);
        assert!((lambda21_direct(&f).unwrap() - 16.0 * s).abs() < 1e-12);
        assert!((lambda_direct(&f, 2, 1).unwrap() - 4.0 * s).abs() < 1e-12);
        assert!(theta_sq_expansion(kernel, alpha + 0.1).is_err());
    }

    #[test]
    fn tight_case_vanishes() {
        let f = ChaosVector::from_kernel(SymTensor::diagonal(&[0.5; 12]));
        let t = theta(&f, 6.0).unwrap();
        assert_eq!(t.max_abs(), 0.0);
        assert!(fourth_moment_combo(&f, 6.0).unwrap().abs() < 1e-10);
        assert_eq!(lambda21_direct(&f).unwrap(), 0.0);
        assert!(fourth_moment_combo(&f, 5.0).is_err());
    }

    #[test]
    fn c1_values() {
        assert_eq!(c1_constant(2).unwrap(), 2.0);
        assert_eq!(c1_constant(4).unwrap(), 6.0);
        assert!(c1_constant(3).is_err());
    }

    #[test]
    fn expansions_match_engine() {
        for (q, d, seed) in [(2, 5, 1), (2, 3, 2), (4, 3, 3), (4, 4, 4)] {
            let (f, alpha) = normalized(q, d, seed);
            let kernel = f.kernel(q).unwrap();
            let th = theta(&f, alpha).unwrap().second_moment();
            let ex = theta_sq_expansion(kernel, alpha).unwrap();
            assert!((th - ex).abs() < 1e-10 * th.max(1.0), "theta q={q}: {th} vs {ex}");
            let a = lambda21_direct(&f).unwrap();
            let b = lambda21_expansion(kernel).unwrap();
            assert!((a - b).abs() < 1e-10 * a.max(1.0), "lambda21 q={q}: {a} vs {b}");
            assert!(a <= c1_constant(q).unwrap() * th * (1.0 + 1e-12));
            for k in 2..=q / 2 + 1 {
                for l in 1..=k {
                    if k + l < 3 {
                        continue;
                    }
                    let a = lambda_direct(&f, k, l).unwrap();
                    let b = lambda_expansion(kernel, k, l).unwrap();
                    assert!((a - b).abs() < 1e-10 * a.max(1.0), "lambda({k},{l}) q={q}: {a} vs {b}");
                }
            }
            assert!(dtheta_identity_check(&f, alpha).unwrap());
        }
    }

    #[test]
    fn lambda21_is_a_quarter_of_the_gradient_form_at_q2() {
        let (f, _) = normalized(2, 4, 8);
        let a = lambda_direct(&f, 2, 1).unwrap();
        let b = lambda21_direct(&f).unwrap();
        assert!((a - b / 4.0).abs() < 1e-12 * b);
    }

    #[test]
    fn lambda_field_shape() {
        let (f, _) = normalized(4, 3, 9);
        let two_two = LambdaField::new(&f, 2, 2).unwrap();
        assert!(two_two.asymmetry().unwrap() < 1e-12);
        let three_two = LambdaField::new(&f, 3, 2).unwrap();
        assert_eq!(three_two.len(), 6 * 3);
        assert_eq!(three_two.symmetric_component_count(), 10);
        assert!(three_two.asymmetry().unwrap() > 1e-6);
    }
}
