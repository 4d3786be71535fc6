//! Randomized exact-identity checks on the chaos engine and the contraction
//! expansions. Used by the `verify` command and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    dtheta_identity_gap, lambda21_direct, lambda21_expansion, lambda_const, lambda_direct, lambda_expansion, theta,
    theta_sq_expansion,
};
use crate::chaos::{carre_du_champ, ChaosField, ChaosVector};
use crate::error::Result;
use crate::hermite::{factorial, SymTensor};

pub const IDENTITY_TOL: f64 = 1e-10;
pub const RECURSION_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub cases: usize,
    /// largest relative error |a - b| / max(1, |a|)
    pub max_err: f64,
    pub tol: f64,
    pub passed: bool,
}

struct Acc {
    name: &'static str,
    tol: f64,
    cases: usize,
    max_err: f64,
}

impl Acc {
    fn new(name: &'static str, tol: f64) -> Self {
        Acc { name, tol, cases: 0, max_err: 0.0 }
    }

    fn push(&mut self, a: f64, b: f64) {
        let e = (a - b).abs() / a.abs().max(1.0);
        self.cases += 1;
        // NaN must not slip through max()
        self.max_err = if e.is_nan() { f64::INFINITY } else { self.max_err.max(e) };
    }

    fn finish(self) -> Check {
        Check { name: self.name.into(), cases: self.cases, max_err: self.max_err, tol: self.tol, passed: self.cases > 0 && self.max_err <= self.tol }
    }
}

fn normalized(q: usize, dim: usize, rng: &mut ChaCha8Rng) -> (ChaosVector, f64) {
    let f = ChaosVector::from_kernel(SymTensor::random(q, dim, rng));
    let alpha = f.second_moment();
    (f, alpha)
}

fn contraction_checks(f: &ChaosVector, alpha: f64, q: usize, acc: &mut [Acc; 4]) -> Result<()> {
    let kernel = f.kernel(q).expect("pure chaos");
    acc[0].push(theta(f, alpha)?.second_moment(), theta_sq_expansion(kernel, alpha)?);
    acc[1].push(lambda21_direct(f)?, lambda21_expansion(kernel)?);
    for k in 2..=q / 2 + 1 {
        for l in 1..=k {
            if k + l >= 3 {
                acc[2].push(lambda_direct(f, k, l)?, lambda_expansion(kernel, k, l)?);
            }
        }
    }
    let gap = dtheta_identity_gap(f, alpha)?;
    acc[3].push(0.0, gap);
    Ok(())
}

/// Contraction expansions against direct engine values on random pure-chaos
/// kernels of order 2 and 4, the DTheta identity, and the lambda recursion.
pub fn exact_identity_suite(seed: u64, second_cases: usize, quartic_cases: usize) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = [
        Acc::new("theta_sq_expansion", IDENTITY_TOL),
        Acc::new("lambda21_expansion", IDENTITY_TOL),
        Acc::new("lambda_expansion", IDENTITY_TOL),
        Acc::new("dtheta_identity", IDENTITY_TOL),
    ];
    for i in 0..second_cases {
        let (f, alpha) = normalized(2, 2 + i % 5, &mut rng);
        contraction_checks(&f, alpha, 2, &mut acc)?;
    }
    for i in 0..quartic_cases {
        let (f, alpha) = normalized(4, 2 + i % 5, &mut rng);
        contraction_checks(&f, alpha, 4, &mut acc)?;
    }
    let mut out: Vec<Check> = acc.into_iter().map(Acc::finish).collect();
    out.push(lambda_recursion_check()?);
    Ok(out)
}

/// 1/lambda(k+1, l) + 1/lambda(k, l+1) = 1/lambda(k, l) for even q <= 8.
pub fn lambda_recursion_check() -> Result<Check> {
    let mut acc = Acc::new("lambda_recursion", RECURSION_TOL);
    for q in (2..=8).step_by(2) {
        let h = q / 2;
        for k in 1..=h {
            for l in 1..=k {
                if k + l < 3 {
                    continue;
                }
                let inv = |a: usize, b: usize| lambda_const(a.max(b), a.min(b), q).map(|v| 1.0 / v);
                let lhs = inv(k + 1, l)? + inv(k, l + 1)?;
                let rhs = inv(k, l)?;
                acc.push(rhs, lhs);
            }
        }
    }
    Ok(acc.finish())
}

fn random_chaos(rng: &mut ChaCha8Rng, dim: usize, orders: &[usize]) -> ChaosVector {
    let mut f = ChaosVector::constant_value(dim, rng.gen_range(-1.0..1.0));
    for &n in orders {
        f = f.add(&ChaosVector::from_kernel(SymTensor::random(n, dim, rng))).expect("same dimension");
    }
    f
}

/// Isometry, orthogonality, duality, -delta D = L, L L^{-1} F = F - E F and the
/// carre du champ identity on random finite chaos expansions.
pub fn operator_suite(seed: u64, cases: usize) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut iso = Acc::new("isometry", IDENTITY_TOL);
    let mut orth = Acc::new("orthogonality", IDENTITY_TOL);
    let mut dual = Acc::new("duality", IDENTITY_TOL);
    let mut gen = Acc::new("divergence_of_derivative", IDENTITY_TOL);
    let mut inv = Acc::new("inverse_generator", IDENTITY_TOL);
    let mut carre = Acc::new("carre_du_champ", IDENTITY_TOL);
    for i in 0..cases {
        let dim = 2 + i % 3;
        let q = 1 + i % 4;
        let kq = SymTensor::random(q, dim, &mut rng);
        let iq = ChaosVector::from_kernel(kq.clone());
        // product formula path against the isometry
        iso.push(factorial(q) * kq.norm_sq(), iq.multiply(&iq)?.expectation());
        let other = ChaosVector::from_kernel(SymTensor::random(q % 4 + 1, dim, &mut rng));
        orth.push(0.0, iq.multiply(&other)?.expectation());

        let f = random_chaos(&mut rng, dim, &[1, 2, 3]);
        let g = random_chaos(&mut rng, dim, &[1, 2]);
        let u = ChaosField::new((0..dim).map(|_| random_chaos(&mut rng, dim, &[1, 2])).collect())?;
        dual.push(f.malliavin_d().inner(&u)?.expectation(), f.multiply(&u.divergence()?)?.expectation());

        let lhs = f.malliavin_d().divergence()?.scale(-1.0);
        gen.push(0.0, lhs.sub(&f.generator_l())?.max_abs());
        inv.push(0.0, f.inverse_l().generator_l().sub(&f.add_constant(-f.expectation()))?.max_abs());

        let half = f.multiply(&g)?.generator_l().sub(&f.multiply(&g.generator_l())?)?.sub(&g.multiply(&f.generator_l())?)?.scale(0.5);
        carre.push(0.0, half.sub(&carre_du_champ(&f, &g)?)?.max_abs());
    }
    Ok(vec![iso.finish(), orth.finish(), dual.finish(), gen.finish(), inv.finish(), carre.finish()])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass() {
        for c in exact_identity_suite(7, 6, 2).unwrap().into_iter().chain(operator_suite(8, 8).unwrap()) {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn broken_identity_is_reported() {
        let mut a = Acc::new("x", 1e-10);
        a.push(1.0, 1.0 + 1e-6);
        assert!(!a.finish().passed);
        let mut a = Acc::new("x", 1e-10);
        a.push(1.0, f64::NAN);
        assert!(!a.finish().passed);
    }
}
