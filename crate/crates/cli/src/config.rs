//! Run configuration: one JSON document, overridden field by field by flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gammachaos::simulate::mc::DEFAULT_CHUNK;
use gammachaos::{ChaosVector, McConfig, MixedSpec, SecondChaosSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Configuration problems that should exit with the validation code.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Moments,
    Bound,
    Density,
    Stein,
    Verify,
    Report,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecondChaosDef {
    pub zeta: Vec<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Spec {
    /// F = sum zeta_i (Z_i^2 - 1)
    SecondChaos(SecondChaosDef),
    /// an arbitrary finite chaos expansion
    Chaos(ChaosVector),
    /// second chaos plus a quartic coordinate
    Mixed(MixedSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpecSource {
    Path(PathBuf),
    Inline(Spec),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BoundForm {
    /// single even chaos, fourth-moment radical
    #[default]
    FourthMoment,
    /// finite chaos sum, gradient-gap radical
    General,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    Malliavin,
    Kde,
    Cf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSettings {
    #[serde(default = "default_n")]
    pub n: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_chunk")]
    pub chunk_size: u64,
}

fn default_n() -> u64 {
    100_000
}
fn default_seed() -> u64 {
    1
}
fn default_chunk() -> u64 {
    DEFAULT_CHUNK
}

impl Default for McSettings {
    fn default() -> Self {
        McSettings { n: default_n(), seed: default_seed(), chunk_size: default_chunk() }
    }
}

impl McSettings {
    pub fn config(&self) -> McConfig {
        McConfig { n: self.n, seed: self.seed, chunk_size: self.chunk_size }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteinSettings {
    #[serde(default = "default_stein_x")]
    pub x: f64,
    #[serde(default = "default_lo")]
    pub lo: f64,
    #[serde(default)]
    pub hi: Option<f64>,
    #[serde(default = "default_per_side")]
    pub per_side: usize,
}

fn default_stein_x() -> f64 {
    1.0
}
fn default_lo() -> f64 {
    0.01
}
fn default_per_side() -> usize {
    200
}

impl Default for SteinSettings {
    fn default() -> Self {
        SteinSettings { x: default_stein_x(), lo: default_lo(), hi: None, per_side: default_per_side() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySettings {
    #[serde(default = "default_verify_seed")]
    pub seed: u64,
    #[serde(default = "default_second_cases")]
    pub second_cases: usize,
    #[serde(default = "default_quartic_cases")]
    pub quartic_cases: usize,
    #[serde(default = "default_second_cases")]
    pub operator_cases: usize,
}

fn default_verify_seed() -> u64 {
    2024
}
fn default_second_cases() -> usize {
    20
}
fn default_quartic_cases() -> usize {
    5
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            seed: default_verify_seed(),
            second_cases: default_second_cases(),
            quartic_cases: default_quartic_cases(),
            operator_cases: default_second_cases(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_identity_tol")]
    pub identity: f64,
    #[serde(default = "default_recursion_tol")]
    pub recursion: f64,
    #[serde(default = "default_residual_tol")]
    pub stein_residual: f64,
}

fn default_identity_tol() -> f64 {
    gammachaos::identities::IDENTITY_TOL
}
fn default_recursion_tol() -> f64 {
    gammachaos::identities::RECURSION_TOL
}
fn default_residual_tol() -> f64 {
    1e-8
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { identity: default_identity_tol(), recursion: default_recursion_tol(), stein_residual: default_residual_tol() }
    }
}

fn default_s() -> usize {
    8
}
fn default_bandwidth() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default)]
    pub spec: Option<SpecSource>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub xs: Vec<f64>,
    #[serde(default)]
    pub k: usize,
    #[serde(default)]
    pub mc: McSettings,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub form: BoundForm,
    #[serde(default = "default_s")]
    pub s: usize,
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    #[serde(default)]
    pub stein: SteinSettings,
    #[serde(default)]
    pub verify: VerifySettings,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

/// A spec resolved to a chaos vector with its shift.
pub struct Resolved {
    pub f: ChaosVector,
    pub alpha: f64,
    pub second_chaos: Option<SecondChaosSpec>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", path.display())))
    }

    /// Replaces a spec given by path with its contents so the hash covers the data.
    pub fn inline_spec(&mut self, base: Option<&Path>) -> Result<()> {
        if let Some(SpecSource::Path(p)) = &self.spec {
            let full = match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p.clone(),
            };
            let text = std::fs::read_to_string(&full).with_context(|| format!("reading spec {}", full.display()))?;
            let spec: Spec = serde_json::from_str(&text).map_err(|e| invalid(format!("spec {}: {e}", full.display())))?;
            self.spec = Some(SpecSource::Inline(spec));
        }
        Ok(())
    }

    pub fn validate(&self, command: Command) -> Result<()> {
        let needs_spec = !matches!(command, Command::Stein | Command::Verify);
        if needs_spec && self.spec.is_none() {
            return Err(invalid("this command needs a spec"));
        }
        if self.mc.n < 2 || self.mc.chunk_size == 0 {
            return Err(invalid("mc.n must be at least 2 and mc.chunk_size positive"));
        }
        if self.xs.iter().any(|x| !x.is_finite()) {
            return Err(invalid("grid points must be finite"));
        }
        if matches!(command, Command::Bound | Command::Density | Command::Report) && self.xs.is_empty() {
            return Err(invalid("this command needs a non-empty grid xs"));
        }
        if self.k > 2 {
            return Err(invalid(format!("derivative order k must be 0, 1 or 2, got {}", self.k)));
        }
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return Err(invalid("bandwidth must be positive"));
        }
        let st = &self.stein;
        if !(st.lo > 0.0 && st.hi.map_or(true, |h| h > st.lo) && st.per_side > 0) {
            return Err(invalid("stein grid needs 0 < lo < hi and per_side > 0"));
        }
        if let Some(a) = self.alpha {
            if !(a.is_finite() && a > 0.0) {
                return Err(invalid("alpha must be positive and finite"));
            }
        }
        Ok(())
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let spec = match &self.spec {
            Some(SpecSource::Inline(s)) => s,
            Some(SpecSource::Path(_)) => unreachable!("specs are inlined before resolution"),
            None => return Err(invalid("this command needs a spec")),
        };
        Ok(match spec {
            Spec::SecondChaos(d) => {
                let matched = 2.0 * d.zeta.iter().map(|z| z * z).sum::<f64>();
                let alpha = self.alpha.or(d.alpha).unwrap_or(matched);
                let sc = SecondChaosSpec::new(d.zeta.clone(), alpha)?;
                Resolved { f: sc.to_chaos(), alpha, second_chaos: Some(sc) }
            }
            Spec::Chaos(f) => Resolved { f: f.clone(), alpha: self.alpha.unwrap_or_else(|| f.second_moment()), second_chaos: None },
            Spec::Mixed(m) => {
                let m = MixedSpec::new(m.zeta.clone(), m.beta)?;
                Resolved { f: m.to_chaos(), alpha: self.alpha.unwrap_or_else(|| m.alpha()), second_chaos: None }
            }
        })
    }

    /// sha256 of the canonical JSON of everything that affects results.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

pub fn parse_spec_arg(arg: &str) -> Result<SpecSource> {
    if arg.trim_start().starts_with('{') {
        let spec: Spec = serde_json::from_str(arg).map_err(|e| invalid(format!("inline spec: {e}")))?;
        Ok(SpecSource::Inline(spec))
    } else {
        Ok(SpecSource::Path(PathBuf::from(arg)))
    }
}
