//! Seeded Monte Carlo estimators and the characteristic-function oracle.

pub mod cf;
pub mod density;
pub mod mc;

use serde::{Deserialize, Serialize};

pub use cf::{density_cf_oracle, density_cf_smoothed};
pub use density::{density_kde, density_malliavin, MalliavinSampler};
pub use mc::{run, Chunking, McConfig, McEstimate, Stream};

use crate::chaos::{ChaosVector, CompiledChaos, EvalScratch};
use crate::error::{Error, Result};
use crate::gamma::GammaTarget;
use crate::hermite::SymTensor;

/// F = sum zeta_i (Z_i^2 - 1) together with the shift alpha.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecondChaosSpec {
    pub zeta: Vec<f64>,
    pub alpha: f64,
}

impl SecondChaosSpec {
    pub fn new(zeta: Vec<f64>, alpha: f64) -> Result<Self> {
        let s = SecondChaosSpec { zeta, alpha };
        s.validate()?;
        Ok(s)
    }

    /// Equal weights with alpha = E[F^2].
    pub fn uniform(n: usize, zeta: f64) -> Self {
        SecondChaosSpec { zeta: vec![zeta; n], alpha: 2.0 * n as f64 * zeta * zeta }
    }

    /// Weights as given, alpha = E[F^2] = 2 sum zeta_i^2.
    pub fn with_matched_alpha(zeta: Vec<f64>) -> Result<Self> {
        let alpha = 2.0 * zeta.iter().map(|z| z * z).sum::<f64>();
        Self::new(zeta, alpha)
    }

    pub fn validate(&self) -> Result<()> {
        if self.zeta.is_empty() {
            return Err(Error::invalid("zeta must be non-empty"));
        }
        if self.zeta.iter().any(|z| !(z.is_finite() && *z > 0.0)) {
            return Err(Error::invalid("zeta entries must be positive and finite"));
        }
        if self.zeta.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::invalid("zeta must be non-increasing"));
        }
        if !self.alpha.is_finite() {
            return Err(Error::invalid("alpha must be finite"));
        }
        Ok(())
    }

    pub fn sum_zeta(&self) -> f64 {
        self.zeta.iter().sum()
    }

    pub fn variance(&self) -> f64 {
        2.0 * self.zeta.iter().map(|z| z * z).sum::<f64>()
    }

    pub fn to_chaos(&self) -> ChaosVector {
        ChaosVector::from_kernel(SymTensor::diagonal(&self.zeta))
    }
}

/// Pointwise weights available to the indicator functionals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Weight {
    One,
    /// nu_k(F + shift) of the Gamma(alpha) family
    Nu { alpha: f64, k: usize },
}

/// Closed catalog of functionals for `mc_expect`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Functional {
    /// (F + shift)^exponent; the absolute value is taken for non-integer exponents
    Power { shift: f64, exponent: f64 },
    /// |F + shift|^exponent
    AbsPower { shift: f64, exponent: f64 },
    /// ||DF||^exponent
    GradNorm { exponent: f64 },
    /// |F + shift|^value_exponent * ||DF||^grad_exponent
    Joint { shift: f64, value_exponent: f64, grad_exponent: f64 },
    /// 1{F + shift > x} * weight
    IndicatorAbove { x: f64, shift: f64, weight: Weight },
    /// 1{F + shift < x} * weight
    IndicatorBelow { x: f64, shift: f64, weight: Weight },
}

fn signed_pow(v: f64, e: f64) -> f64 {
    if e.fract() == 0.0 && e.abs() < 1e9 {
        v.powi(e as i32)
    } else {
        v.abs().powf(e)
    }
}

impl Functional {
    fn needs_gradient(&self) -> bool {
        matches!(self, Functional::GradNorm { .. } | Functional::Joint { .. })
    }

    fn apply(&self, f: f64, w: f64) -> f64 {
        let weight = |wt: &Weight, y: f64| match *wt {
            Weight::One => 1.0,
            Weight::Nu { alpha, k } => GammaTarget::new(alpha).map(|g| g.nu(k, y)).unwrap_or(f64::NAN),
        };
        match self {
            Functional::Power { shift, exponent } => signed_pow(f + shift, *exponent),
            Functional::AbsPower { shift, exponent } => (f + shift).abs().powf(*exponent),
            Functional::GradNorm { exponent } => w.powf(0.5 * exponent),
            Functional::Joint { shift, value_exponent, grad_exponent } => {
                (f + shift).abs().powf(*value_exponent) * w.powf(0.5 * grad_exponent)
            }
            Functional::IndicatorAbove { x, shift, weight: wt } => {
                let y = f + shift;
                if y > *x {
                    weight(wt, y)
                } else {
                    0.0
                }
            }
            Functional::IndicatorBelow { x, shift, weight: wt } => {
                let y = f + shift;
                if y < *x {
                    weight(wt, y)
                } else {
                    0.0
                }
            }
        }
    }
}

/// Estimates E[g_i(values)] where `values` are the chaos variables evaluated at one Gaussian draw.
pub fn mc_pointwise<G>(vars: &[ChaosVector], outputs: usize, cfg: &McConfig, g: G) -> Result<Vec<McEstimate>>
where
    G: Fn(&[f64], &mut [f64]) -> bool + Sync,
{
    let dim = vars.first().map(|v| v.dim()).ok_or_else(|| Error::invalid("no variables"))?;
    if vars.iter().any(|v| v.dim() != dim) {
        return Err(Error::invalid("variables must share one dimension"));
    }
    let compiled: Vec<CompiledChaos> = vars.iter().map(|v| v.compile()).collect();
    run(
        cfg,
        outputs,
        || (vec![0.0; dim], vec![0.0; compiled.len()], EvalScratch::default()),
        |(z, vals, scratch), s, out| {
            s.normals(z);
            for (v, c) in vals.iter_mut().zip(&compiled) {
                *v = c.value(z, scratch);
            }
            g(vals, out)
        },
    )
}

pub fn mc_expect_many(f: &ChaosVector, gs: &[Functional], cfg: &McConfig) -> Result<Vec<McEstimate>> {
    let mut vars = vec![f.clone()];
    if gs.iter().any(|g| g.needs_gradient()) {
        vars.push(f.malliavin_d().norm_sq()?);
    }
    mc_pointwise(&vars, gs.len(), cfg, |vals, out| {
        let w = vals.get(1).copied().unwrap_or(f64::NAN);
        for (o, g) in out.iter_mut().zip(gs) {
            *o = g.apply(vals[0], w);
        }
        true
    })
}

pub fn mc_expect(f: &ChaosVector, g: Functional, cfg: &McConfig) -> Result<McEstimate> {
    Ok(mc_expect_many(f, &[g], cfg)?.remove(0))
}
