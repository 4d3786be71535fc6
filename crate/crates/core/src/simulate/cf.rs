//! Exact density of a diagonal second-chaos variable by Fourier inversion.
//!
//! X = alpha + sum zeta_i (Z_i^2 - 1) has characteristic function
//! phi(t) = exp(i t c) prod (1 - 2 i zeta_i t)^(-1/2), c = alpha - sum zeta_i.
//! The inversion integral is taken along the ray t = r e^(i theta) with
//! theta = -pi/4 right of c and +pi/4 left of it, where the integrand decays
//! exponentially and no branch point is crossed.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::quadrature::integrate_tail;
use crate::simulate::SecondChaosSpec;

const TOL: f64 = 1e-13;

fn inversion(spec: &SecondChaosSpec, x: f64, h: f64) -> Result<f64> {
    spec.validate()?;
    let c = spec.alpha - spec.sum_zeta();
    if h == 0.0 && x < c {
        return Ok(0.0);
    }
    if h == 0.0 && x == c {
        if spec.zeta.len() <= 2 {
            return Err(Error::domain("density is unbounded or discontinuous at the left edge of the support"));
        }
        return Ok(0.0);
    }
    let theta = if x >= c { -std::f64::consts::FRAC_PI_4 } else { std::f64::consts::FRAC_PI_4 };
    let dir = Complex64::from_polar(1.0, theta);
    let i = Complex64::i();
    let integrand = |r: f64| {
        let t = dir * r;
        let mut v = (i * t * (c - x) - 0.5 * h * h * t * t).exp();
        for &z in &spec.zeta {
            v /= (Complex64::new(1.0, 0.0) - 2.0 * i * z * t).sqrt();
        }
        (dir * v).re
    };
    let v = integrate_tail(integrand, 0.0, TOL)? / std::f64::consts::PI;
    if !v.is_finite() {
        return Err(Error::numerical(format!("characteristic function inversion failed at x = {x}")));
    }
    Ok(v)
}

/// Density of alpha + F at each x.
pub fn density_cf_oracle(spec: &SecondChaosSpec, xs: &[f64]) -> Result<Vec<f64>> {
    xs.iter().map(|&x| inversion(spec, x, 0.0)).collect()
}

/// Density of alpha + F + h N with N an independent standard normal, which is the
/// expectation of a Gaussian kernel density estimate with bandwidth h.
pub fn density_cf_smoothed(spec: &SecondChaosSpec, xs: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid("bandwidth must be positive"));
    }
    xs.iter().map(|&x| inversion(spec, x, h)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gamma::GammaTarget;
    use crate::quadrature::integrate;

    #[test]
    fn equal_weights_give_gamma() {
        for (n, alpha) in [(6, 3.0), (12, 6.0), (3, 1.5)] {
            let spec = SecondChaosSpec::uniform(n, 0.5);
            assert_eq!(spec.alpha, alpha);
            let t = GammaTarget::new(alpha).unwrap();
            let xs = [0.05, 0.5, 1.0, 2.0, 3.3, 7.0, 15.0];
            for (p, &x) in density_cf_oracle(&spec, &xs).unwrap().iter().zip(&xs) {
                assert!((p - t.pdf(x)).abs() < 1e-10, "n={n} x={x}: {p} vs {}", t.pdf(x));
            }
            assert_eq!(density_cf_oracle(&spec, &[-0.1]).unwrap()[0], 0.0);
        }
    }

    #[test]
    fn unequal_weights_normalize_and_center() {
        let spec = SecondChaosSpec::new(vec![0.9, 0.6, 0.6, 0.5, 0.3], 2.2).unwrap();
        let c = spec.alpha - spec.sum_zeta();
        let p = |x: f64| density_cf_oracle(&spec, &[x]).unwrap()[0];
        let mass = integrate(p, c, c + 60.0, 1e-10).unwrap();
        let mean = integrate(|x| x * p(x), c, c + 60.0, 1e-9).unwrap();
        let second = integrate(|x| (x - spec.alpha).powi(2) * p(x), c, c + 60.0, 1e-9).unwrap();
        assert!((mass - 1.0).abs() < 1e-8, "{mass}");
        assert!((mean - spec.alpha).abs() < 1e-7, "{mean}");
        assert!((second - spec.variance()).abs() < 1e-6, "{second}");
    }

    #[test]
    fn smoothing_matches_convolution() {
        let spec = SecondChaosSpec::uniform(6, 0.5);
        let h = 0.2;
        let t = GammaTarget::new(3.0).unwrap();
        for x in [-0.3, 0.4, 2.0] {
            let direct = integrate(
                |y: f64| t.pdf(y) * (-(x - y) * (x - y) / (2.0 * h * h)).exp() / (h * (2.0 * std::f64::consts::PI).sqrt()),
                0.0,
                40.0,
                1e-12,
            )
            .unwrap();
            let got = density_cf_smoothed(&spec, &[x], h).unwrap()[0];
            assert!((got - direct).abs() < 1e-9, "x={x}: {got} vs {direct}");
        }
    }
}
