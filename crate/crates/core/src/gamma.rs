//! Gamma target: densities, derivatives, the nu_k weights, the Laguerre
//! generator and invariant-density representations of 1-d diffusions.

use rand_distr::Gamma;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::hermite::{binomial, PolySpec};
use crate::simulate::mc::{self, McConfig, McEstimate, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaTarget {
    alpha: f64,
}

impl GammaTarget {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::domain(format!("Gamma parameter must be positive, got {alpha}")));
        }
        Ok(GammaTarget { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// prod_{j=1}^{i} (j - alpha), by forward product.
    pub fn shifted_product(&self, i: usize) -> f64 {
        (1..=i).fold(1.0, |acc, j| acc * (j as f64 - self.alpha))
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        ((self.alpha - 1.0) * x.ln() - x - ln_gamma(self.alpha)).exp()
    }

    /// k-th derivative of the density.
    pub fn pdf_deriv(&self, k: usize, x: f64) -> Result<f64> {
        if x == 0.0 {
            if self.alpha > (k + 1) as f64 {
                return Ok(0.0);
            }
            return Err(Error::domain(format!(
                "derivative of order {k} is undefined at the origin for alpha = {}",
                self.alpha
            )));
        }
        if x < 0.0 {
            return Ok(0.0);
        }
        let sum: f64 = (0..=k)
            .map(|i| binomial(k, i) * self.shifted_product(i) * x.powi(-(i as i32)))
            .sum();
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        Ok(sign * self.pdf(x) * sum)
    }

    /// nu_k(y) for k >= 1, zero at the origin.
    pub fn nu(&self, k: usize, y: f64) -> f64 {
        assert!(k >= 1, "nu is indexed from 1");
        if y == 0.0 {
            return 0.0;
        }
        let sum: f64 = (0..=k)
            .map(|i| binomial(k, i) * self.shifted_product(i) * y.powi(-(i as i32)))
            .sum();
        if k % 2 == 1 {
            sum
        } else {
            -sum
        }
    }

    /// d/dy nu_k(y).
    pub fn nu_prime(&self, k: usize, y: f64) -> f64 {
        let sum: f64 = (1..=k)
            .map(|i| -(i as f64) * binomial(k, i) * self.shifted_product(i) * y.powi(-(i as i32) - 1))
            .sum();
        if k % 2 == 1 {
            sum
        } else {
            -sum
        }
    }

    /// Coefficients c_i = C(k, i) |prod_{j<=i}(j - alpha)| bounding |nu_k(y)| by sum c_i |y|^{-i}.
    pub fn nu_abs_coeffs(&self, k: usize) -> Vec<f64> {
        (0..=k).map(|i| binomial(k, i) * self.shifted_product(i).abs()).collect()
    }

    /// Monte Carlo estimate of E[1{G > x} nu_{k+1}(G)] (x > 0) or E[1{G < x} nu_{k+1}(G)] (x < 0).
    pub fn representation_check(&self, k: usize, x: f64, cfg: &McConfig) -> Result<McEstimate> {
        if x == 0.0 && self.alpha <= (k + 1) as f64 {
            return Err(Error::domain("the origin needs alpha > k + 1"));
        }
        let dist = Gamma::new(self.alpha, 1.0).map_err(|e| Error::domain(e.to_string()))?;
        let t = *self;
        let est = mc::run(cfg, 1, || (), move |_, s: &mut Stream, out| {
            let g = s.gamma(&dist);
            let hit = if x >= 0.0 { g > x } else { g < x };
            out[0] = if hit { t.nu(k + 1, g) } else { 0.0 };
            true
        })?;
        Ok(est.into_iter().next().expect("one output"))
    }
}

/// L f = x f'' + (alpha - x) f'.
pub fn laguerre_l(p: &PolySpec, t: &GammaTarget) -> PolySpec {
    let d1 = p.derivative();
    let d2 = d1.derivative();
    let drift = PolySpec::new(vec![t.alpha(), -1.0]);
    PolySpec::x().mul(&d2).add(&drift.mul(&d1))
}

/// Gamma(f, g) = x f' g'.
pub fn laguerre_carre(p: &PolySpec, q: &PolySpec) -> PolySpec {
    PolySpec::x().mul(&p.derivative()).mul(&q.derivative())
}

/// How the diffusion coefficient of a 1-d generator is specified.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeneratorConvention {
    /// L f = (1/2) sigma^2 f'' + b f', carre du champ (1/2) sigma^2 f'^2
    HalfSigmaSquared,
    /// L f = tau f'' + b f', carre du champ tau f'^2
    Direct,
}

/// A 1-d diffusion on (lower, upper).
pub struct DiffusionSpec {
    pub drift: Box<dyn Fn(f64) -> f64 + Sync + Send>,
    /// sigma under `HalfSigmaSquared`, tau under `Direct`
    pub diffusion: Box<dyn Fn(f64) -> f64 + Sync + Send>,
    pub diffusion_prime: Box<dyn Fn(f64) -> f64 + Sync + Send>,
    pub convention: GeneratorConvention,
    pub lower: f64,
    pub upper: f64,
}

impl DiffusionSpec {
    pub fn ornstein_uhlenbeck() -> Self {
        DiffusionSpec {
            drift: Box::new(|x| -x),
            diffusion: Box::new(|_| std::f64::consts::SQRT_2),
            diffusion_prime: Box::new(|_| 0.0),
            convention: GeneratorConvention::HalfSigmaSquared,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    /// Laguerre diffusion with sigma(x) = sqrt(2x).
    pub fn laguerre(alpha: f64) -> Self {
        DiffusionSpec {
            drift: Box::new(move |x| alpha - x),
            diffusion: Box::new(|x| (2.0 * x).sqrt()),
            diffusion_prime: Box::new(|x| 1.0 / (2.0 * x).sqrt()),
            convention: GeneratorConvention::HalfSigmaSquared,
            lower: 0.0,
            upper: f64::INFINITY,
        }
    }

    /// Laguerre diffusion with tau(x) = x read off the generator directly.
    pub fn laguerre_direct(alpha: f64) -> Self {
        DiffusionSpec {
            drift: Box::new(move |x| alpha - x),
            diffusion: Box::new(|x| x),
            diffusion_prime: Box::new(|_| 1.0),
            convention: GeneratorConvention::Direct,
            lower: 0.0,
            upper: f64::INFINITY,
        }
    }

    /// Integrand w with p(x) = E[1{x <= F} w(F)].
    fn weight(&self, y: f64) -> f64 {
        let (b, s, ds) = ((self.drift)(y), (self.diffusion)(y), (self.diffusion_prime)(y));
        match self.convention {
            GeneratorConvention::HalfSigmaSquared => -2.0 * (-ds / s + b / (s * s)),
            GeneratorConvention::Direct => ds / s - b / s,
        }
    }
}

/// Monte Carlo estimate of the invariant density at x from samples of the invariant law.
pub fn diffusion_density_rep<S>(spec: &DiffusionSpec, sampler: S, x: f64, cfg: &McConfig) -> Result<McEstimate>
where
    S: Fn(&mut Stream) -> f64 + Sync,
{
    if !(x > spec.lower && x < spec.upper) {
        let est = mc::run(cfg, 1, || (), |_, s, out| {
            sampler(s);
            out[0] = 0.0;
            true
        })?;
        return Ok(est.into_iter().next().expect("one output"));
    }
    let est = mc::run(cfg, 1, || (), |_, s, out| {
        let y = sampler(s);
        out[0] = if x <= y { spec.weight(y) } else { 0.0 };
        true
    })?;
    let est = est.into_iter().next().expect("one output");
    if est.nonfinite > 0 {
        return Err(Error::numerical(format!("{} sampler draws produced non-finite weights", est.nonfinite)));
    }
    Ok(est)
}
