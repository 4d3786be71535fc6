//! Assembly of the pointwise density bounds from exact chaos quantities,
//! Stein envelopes and Monte Carlo moments.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{c1_constant, pure, require_alpha, require_even, theta, fourth_moment_combo};
use crate::chaos::ChaosVector;
use crate::error::{Error, Result};
use crate::gamma::GammaTarget;
use crate::hermite::SymTensor;
use crate::simulate::density::MalliavinSampler;
use crate::simulate::{density_malliavin, mc_pointwise, run, Functional, McConfig, McEstimate};
use crate::stein::{envelope, Branch, Envelope, MomentSource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundKind {
    /// |p_{F+alpha} - p_G| for F in a single even chaos
    FourthMoment,
    /// |p^(k)_{F+alpha} - p^(k)_G| for F in a single even chaos
    FourthMomentDerivative { k: usize },
    /// |p_{F+alpha} - p_G| for a finite chaos sum, controlled by ||D wbar - DF||
    GeneralFunctional { s: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentValue {
    pub value: f64,
    /// "exact", "lyapunov" (upper bound from an exact integer moment) or "monte_carlo"
    pub method: String,
    pub lyapunov_order: Option<usize>,
    pub stderr: Option<f64>,
    pub unstable: bool,
}

impl MomentValue {
    fn exact(value: f64) -> Self {
        MomentValue { value, method: "exact".into(), lyapunov_order: None, stderr: None, unstable: false }
    }

    fn mc(e: &McEstimate) -> Self {
        MomentValue {
            value: e.value,
            method: "monte_carlo".into(),
            lyapunov_order: None,
            stderr: Some(e.stderr),
            unstable: !e.is_trustworthy(),
        }
    }

    fn from_source(value: f64, src: &MomentSource) -> Self {
        match src {
            MomentSource::Exact => Self::exact(value),
            MomentSource::Lyapunov { order } => {
                MomentValue { value, method: "lyapunov".into(), lyapunov_order: Some(*order), stderr: None, unstable: false }
            }
            MomentSource::MonteCarlo { estimate } => Self::mc(estimate),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub x: f64,
    pub branch: Branch,
    pub envelope: Envelope,
    /// Stein envelope applied to the law of F + alpha
    pub stein_factor: f64,
    /// P(x): everything multiplying the radical
    pub prefactor: f64,
    pub bound: f64,
    pub density_mc: Option<McEstimate>,
    pub density_target: Option<f64>,
}

impl BoundRow {
    pub fn abs_diff(&self) -> Option<f64> {
        Some((self.density_mc.as_ref()?.value - self.density_target?).abs())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralTerms {
    pub s: usize,
    /// Hoelder exponents with 1/p + 2/r + 3/s = 1
    pub p: f64,
    pub r: f64,
    /// E[||D wbar - DF||^{s/2}]^{2/s}
    pub grad_gap: MomentValue,
    /// E[||D wbar - DF||^3]^{1/3}
    pub grad_gap_cubic: MomentValue,
    /// E[||DL^{-1}F||^3]
    pub inverse_gradient_cubic: McEstimate,
    pub wbar_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub alpha: f64,
    /// chaos order for single-chaos inputs
    pub q: Option<usize>,
    pub k: usize,
    pub fourth_moment_combo: Option<f64>,
    /// Var(Theta), exact
    pub theta_var: Option<f64>,
    /// the factor every prefactor multiplies: sqrt(q^2/3 combo), or the gradient gap for general inputs
    pub radical: f64,
    #[serde(rename = "C1")]
    pub c1: Option<f64>,
    pub negative_moments: BTreeMap<String, McEstimate>,
    pub positive_moments: BTreeMap<String, MomentValue>,
    /// Monte Carlo estimate of E|T_{k+1}| for derivative bounds
    pub remainder: Option<McEstimate>,
    pub general: Option<GeneralTerms>,
    pub rows: Vec<BoundRow>,
    pub warnings: Vec<String>,
    pub mc: McConfig,
}

impl BoundReport {
    pub fn bound_at(&self, x: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.x == x).map(|r| r.bound)
    }

    /// Adds Monte Carlo densities of F + alpha and the Gamma target to each row.
    pub fn attach_densities(&mut self, f: &ChaosVector, cfg: &McConfig) -> Result<()> {
        let xs: Vec<f64> = self.rows.iter().map(|r| r.x).collect();
        let est = density_malliavin(f, self.alpha, self.k, &xs, cfg)?;
        let target = GammaTarget::new(self.alpha)?;
        for (row, e) in self.rows.iter_mut().zip(est) {
            row.density_target = Some(if row.x == 0.0 { 0.0 } else { target.pdf_deriv(self.k, row.x)? });
            row.density_mc = Some(e);
        }
        Ok(())
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,density_mc,density_target,abs_diff,bound")?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.x,
                opt(r.density_mc.as_ref().map(|e| e.value)),
                opt(r.density_target),
                opt(r.abs_diff()),
                r.bound
            )?;
        }
        Ok(())
    }
}

/// Existence of negative moments for F in the second chaos, from the spectrum of its kernel.
///
/// F + alpha = sum zeta_i Z_i^2 + (alpha - sum zeta_i). With n positive weights,
/// E[||DF||^{-2a} (F + alpha)^{-b}] is finite iff n > 2a when alpha exceeds the
/// weight sum, and iff n > 2(a + b) when alpha equals it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegativeMomentCheck {
    pub weights: Vec<f64>,
    pub positive: usize,
    pub at_edge: bool,
}

impl NegativeMomentCheck {
    /// None for inputs outside the second chaos.
    pub fn second_chaos(f: &ChaosVector, alpha: f64) -> Result<Option<Self>> {
        if f.pure_order() != Some(2) {
            return Ok(None);
        }
        let weights = f.second_chaos_weights().expect("second chaos");
        let scale = weights.iter().fold(0.0f64, |a, w| a.max(w.abs()));
        let tol = 1e-12 * scale.max(1e-300);
        if weights.iter().any(|&w| w < -tol) {
            return Err(Error::refused(
                "F has a negative weight, so F + alpha is unbounded below and its negative moments are infinite",
            ));
        }
        let sum: f64 = weights.iter().filter(|&&w| w > tol).sum();
        if alpha < sum - ALPHA_EDGE_TOL * alpha.abs().max(1.0) {
            return Err(Error::refused(format!(
                "alpha = {alpha} is below the weight sum {sum}: F + alpha takes negative values and its negative moments are infinite"
            )));
        }
        let positive = weights.iter().filter(|&&w| w > tol).count();
        let at_edge = (alpha - sum).abs() <= ALPHA_EDGE_TOL * alpha.abs().max(1.0);
        Ok(Some(NegativeMomentCheck { weights, positive, at_edge }))
    }

    /// Whether E[||DF||^{-2a} |F + alpha|^{-b}] is finite.
    pub fn finite(&self, a: f64, b: f64) -> bool {
        let need = if self.at_edge { 2.0 * (a + b) } else { 2.0 * a };
        self.positive as f64 > need
    }

    pub fn require(&self, a: f64, b: f64, label: &str) -> Result<()> {
        if self.finite(a, b) {
            return Ok(());
        }
        let need = if self.at_edge { 2.0 * (a + b) } else { 2.0 * a };
        Err(Error::refused(format!(
            "{label} is infinite: it needs more than {need} non-zero weights in the second-chaos representation, found {}",
            self.positive
        )))
    }
}

const ALPHA_EDGE_TOL: f64 = 1e-9;

/// Moments of F + alpha, exact where the engine allows and Monte Carlo otherwise.
struct MomentBook<'a> {
    f: &'a ChaosVector,
    alpha: f64,
    cfg: McConfig,
    cache: BTreeMap<u64, MomentValue>,
}

impl<'a> MomentBook<'a> {
    fn new(f: &'a ChaosVector, alpha: f64, cfg: &McConfig) -> Self {
        MomentBook { f, alpha, cfg: *cfg, cache: BTreeMap::new() }
    }

    fn abs_moment(&mut self, p: f64) -> Result<f64> {
        if let Some(m) = self.cache.get(&p.to_bits()) {
            return Ok(m.value);
        }
        let (value, src) = crate::stein::shifted_abs_moment(self.f, self.alpha, p, &self.cfg)?;
        self.cache.insert(p.to_bits(), MomentValue::from_source(value, &src));
        Ok(value)
    }

    fn into_map(self) -> BTreeMap<String, MomentValue> {
        self.cache.into_iter().map(|(bits, m)| (format!("E[|F+alpha|^{}]", f64::from_bits(bits)), m)).collect()
    }
}

fn envelope_requirements(env: &Envelope, check: &NegativeMomentCheck) -> Result<()> {
    for t in &env.terms {
        if t.power < 0.0 {
            let b = -2.0 * t.power;
            check.require(0.0, b, &format!("E[(F+alpha)^-{b}]"))?;
        }
    }
    Ok(())
}

struct SingleChaos {
    q: usize,
    combo: f64,
    theta_var: f64,
    theta_l2: f64,
    radical: f64,
    check: Option<NegativeMomentCheck>,
    warnings: Vec<String>,
}

fn single_chaos_common(f: &ChaosVector, alpha: f64) -> Result<SingleChaos> {
    let (q, _) = pure(f)?;
    require_even(q)?;
    require_alpha(f.second_moment(), alpha)?;
    let mut warnings = Vec::new();
    let check = NegativeMomentCheck::second_chaos(f, alpha)?;
    if check.is_none() {
        warnings.push(format!(
            "negative moments are not pre-checked for chaos order {q}; Monte Carlo estimates flagged unstable may be meaningless"
        ));
    }
    let combo_raw = fourth_moment_combo(f, alpha)?;
    let scale = f.moment(4)?.abs().max(1.0);
    let combo = if combo_raw < 0.0 {
        if combo_raw < -1e-9 * scale {
            return Err(Error::numerical(format!("fourth-moment combination is negative ({combo_raw})")));
        }
        0.0
    } else {
        combo_raw
    };
    let th = theta(f, alpha)?;
    let theta_sq = th.second_moment();
    let theta_var = th.variance().max(0.0);
    let radical = ((q * q) as f64 / 3.0 * combo).sqrt();
    if theta_sq.sqrt() > radical * (1.0 + 1e-8) + 1e-10 {
        warnings.push(format!(
            "E[Theta^2]^(1/2) = {} exceeds the fourth-moment radical {radical}",
            theta_sq.sqrt()
        ));
    }
    Ok(SingleChaos { q, combo, theta_var, theta_l2: theta_sq.sqrt(), radical, check, warnings })
}

/// Bound on |p_{F+alpha}(x) - p_G(x)| for F in a single even chaos.
pub fn assemble_fourth_moment_bound(f: &ChaosVector, alpha: f64, xs: &[f64], cfg: &McConfig) -> Result<BoundReport> {
    let sc = single_chaos_common(f, alpha)?;
    let envelopes: Vec<Envelope> = xs
        .iter()
        .map(|&x| {
            envelope(alpha, 0, x).map_err(|e| match (x == 0.0, e) {
                (true, _) => Error::domain(format!("x = 0 needs alpha > 1, got alpha = {alpha}")),
                (false, e) => e,
            })
        })
        .collect::<Result<_>>()?;
    let menu: [(&str, f64, f64); 4] = [
        ("E[|DF|^-4]", 2.0, 0.0),
        ("E[|DF|^-4 (F+alpha)^-2]", 2.0, 2.0),
        ("E[|DF|^-6]", 3.0, 0.0),
        ("E[(F+alpha)^-2]", 0.0, 2.0),
    ];
    if let Some(check) = &sc.check {
        for (label, a, b) in menu {
            check.require(a, b, label)?;
        }
        for env in &envelopes {
            envelope_requirements(env, check)?;
        }
    }
    let functionals: Vec<Functional> = menu
        .iter()
        .map(|&(_, a, b)| Functional::Joint { shift: alpha, value_exponent: -b, grad_exponent: -2.0 * a })
        .collect();
    let est = crate::simulate::mc_expect_many(f, &functionals, cfg)?;
    let negative: BTreeMap<String, McEstimate> = menu.iter().map(|m| m.0.to_string()).zip(est.iter().cloned()).collect();
    let c1 = c1_constant(sc.q)?;
    let t1 = est[0].value.sqrt() + (alpha - 1.0).abs() * est[1].value.sqrt() + c1 * est[2].value.sqrt();
    let mut book = MomentBook::new(f, alpha, cfg);
    let mut rows = Vec::with_capacity(xs.len());
    for (&x, env) in xs.iter().zip(envelopes) {
        let stein_factor = env.l2_factor(|p| book.abs_moment(p))?;
        let prefactor = stein_factor + t1;
        let bound = if sc.radical == 0.0 { 0.0 } else { prefactor * sc.radical };
        rows.push(BoundRow { x, branch: env.branch, envelope: env, stein_factor, prefactor, bound, density_mc: None, density_target: None });
    }
    let mut warnings = sc.warnings;
    flag_unstable(&negative, &mut warnings);
    Ok(BoundReport {
        kind: BoundKind::FourthMoment,
        alpha,
        q: Some(sc.q),
        k: 0,
        fourth_moment_combo: Some(sc.combo),
        theta_var: Some(sc.theta_var),
        radical: sc.radical,
        c1: Some(c1),
        negative_moments: negative,
        positive_moments: book.into_map(),
        remainder: None,
        general: None,
        rows,
        warnings,
        mc: *cfg,
    })
}

fn flag_unstable(moments: &BTreeMap<String, McEstimate>, warnings: &mut Vec<String>) {
    for (label, e) in moments {
        if !e.is_trustworthy() {
            warnings.push(format!("{label} is dominated by a few samples (largest share {:.3})", e.max_share));
        }
    }
}

/// Bound on |p^(k)_{F+alpha}(x) - p^(k)_G(x)| for k in {1, 2}, F in a single even chaos.
///
/// The prefactor is the Stein factor plus E|T_{k+1}| / E[Theta^2]^{1/2}, where
/// T_{k+1} = (-1)^k G_{k+1} - nu_{k+1}(F + alpha) is estimated by Monte Carlo.
pub fn assemble_derivative_bound(f: &ChaosVector, alpha: f64, k: usize, xs: &[f64], cfg: &McConfig) -> Result<BoundReport> {
    if !(1..=MalliavinSampler::MAX_K).contains(&k) {
        return Err(Error::invalid(format!("derivative order must be 1 or 2, got {k}")));
    }
    let sc = single_chaos_common(f, alpha)?;
    let envelopes: Vec<Envelope> = xs.iter().map(|&x| envelope(alpha, k, x)).collect::<Result<_>>()?;
    if let Some(check) = &sc.check {
        check.require(0.0, 2.0, "E[(F+alpha)^-2]")?;
        for env in &envelopes {
            envelope_requirements(env, check)?;
        }
    }
    let sampler = MalliavinSampler::new(f, k)?;
    let target = GammaTarget::new(alpha)?;
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    let remainder = run(cfg, 1, || sampler.state(), |st, s, out| {
        s.normals(&mut st.z);
        match sampler.weight(st) {
            None => false,
            Some((v, g)) => {
                out[0] = (sign * g - target.nu(k + 1, v + alpha)).abs();
                true
            }
        }
    })?
    .remove(0);
    let rem_factor = if sc.theta_l2 > 0.0 { remainder.value / sc.theta_l2 } else { 0.0 };
    let mut book = MomentBook::new(f, alpha, cfg);
    let mut rows = Vec::with_capacity(xs.len());
    for (&x, env) in xs.iter().zip(envelopes) {
        let stein_factor = env.l2_factor(|p| book.abs_moment(p))?;
        let prefactor = stein_factor + rem_factor;
        let bound = if sc.radical == 0.0 { 0.0 } else { prefactor * sc.radical };
        rows.push(BoundRow { x, branch: env.branch, envelope: env, stein_factor, prefactor, bound, density_mc: None, density_target: None });
    }
    let mut warnings = sc.warnings;
    if !remainder.is_trustworthy() {
        warnings.push("the Monte Carlo remainder E|T| is dominated by a few samples".into());
    }
    Ok(BoundReport {
        kind: BoundKind::FourthMomentDerivative { k },
        alpha,
        q: Some(sc.q),
        k,
        fourth_moment_combo: Some(sc.combo),
        theta_var: Some(sc.theta_var),
        radical: sc.radical,
        c1: None,
        negative_moments: BTreeMap::new(),
        positive_moments: book.into_map(),
        remainder: Some(remainder),
        general: None,
        rows,
        warnings,
        mc: *cfg,
    })
}

/// F + alpha = sum zeta_i Z_i^2 + beta Z_0^4 + gap, a second-plus-fourth chaos
/// functional with E[F^2] = alpha. Coordinate 0 carries the quartic term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixedSpec {
    pub zeta: Vec<f64>,
    pub beta: f64,
}

impl MixedSpec {
    pub fn new(zeta: Vec<f64>, beta: f64) -> Result<Self> {
        let s = MixedSpec { zeta, beta };
        if s.zeta.is_empty() || s.zeta.iter().any(|z| !(z.is_finite() && *z > 0.0)) || !(s.beta.is_finite() && s.beta >= 0.0) {
            return Err(Error::invalid("weights must be positive and finite"));
        }
        if s.gap() < -ALPHA_EDGE_TOL * s.alpha() {
            return Err(Error::invalid(format!("F + alpha would take negative values (gap {})", s.gap())));
        }
        Ok(s)
    }

    /// Equal weights 1/2 with the quartic weight that makes the gap vanish.
    pub fn edge(n: usize) -> Self {
        MixedSpec { zeta: vec![0.5; n], beta: 1.0 / 32.0 }
    }

    pub fn alpha(&self) -> f64 {
        2.0 * self.zeta.iter().map(|z| z * z).sum::<f64>() + 96.0 * self.beta * self.beta
    }

    /// Lower end of the support of F + alpha.
    pub fn gap(&self) -> f64 {
        self.alpha() - self.zeta.iter().sum::<f64>() - 3.0 * self.beta
    }

    pub fn to_chaos(&self) -> ChaosVector {
        // beta (Z^4 - 3) = beta He_4(Z) + 6 beta He_2(Z)
        let mut diag = vec![6.0 * self.beta];
        diag.extend_from_slice(&self.zeta);
        let second = ChaosVector::from_kernel(SymTensor::diagonal(&diag));
        let d = diag.len();
        let mut quartic = SymTensor::zeros(4, d);
        quartic.set(crate::hermite::MultiIndex::new(vec![0; 4]), self.beta);
        second.add(&ChaosVector::from_kernel(quartic)).expect("same dimension")
    }
}

/// Bound on |p_{F+alpha}(x) - p_G(x)| for a finite chaos sum in terms of
/// wbar = <DF, -DL^{-1}F>; s is 4, 8 or 12.
pub fn assemble_general_bound(f: &ChaosVector, alpha: f64, s: usize, xs: &[f64], cfg: &McConfig) -> Result<BoundReport> {
    if ![4, 8, 12].contains(&s) {
        return Err(Error::invalid(format!("s must be 4, 8 or 12, got {s}")));
    }
    if f.expectation().abs() > 1e-10 {
        return Err(Error::domain("F must be centered"));
    }
    require_alpha(f.second_moment(), alpha)?;
    let mut warnings = Vec::new();
    let check = NegativeMomentCheck::second_chaos(f, alpha)?;
    if check.is_none() {
        warnings.push("negative moments are not pre-checked for this input; Monte Carlo estimates flagged unstable may be meaningless".into());
    }
    let envelopes: Vec<Envelope> = xs.iter().map(|&x| envelope(alpha, 0, x)).collect::<Result<_>>()?;
    if let Some(check) = &check {
        // wbar = ||DF||^2 / 2 on the second chaos
        check.require(3.0, 0.0, "E[wbar^-6]")?;
        check.require(1.0, 2.0, "E[wbar^-2 (F+alpha)^-2]")?;
        for env in &envelopes {
            envelope_requirements(env, check)?;
        }
    }
    let df = f.malliavin_d();
    let dlinv = f.inverse_l().scale(-1.0).malliavin_d();
    let wbar = df.inner(&dlinv)?;
    let wbar_mean = wbar.expectation();
    if (wbar_mean - alpha).abs() > 1e-8 * alpha.max(1.0) {
        return Err(Error::numerical(format!("E[wbar] = {wbar_mean} differs from alpha = {alpha}")));
    }
    let gap = wbar.malliavin_d().axpy(-1.0, &df)?;
    let gap_sq = gap.norm_sq()?;
    let dl_sq = dlinv.norm_sq()?;
    let vars = [f.clone(), wbar, dl_sq, gap_sq.clone()];
    let labels = [
        "E[wbar^-2]",
        "E[wbar^-2 (F+alpha)^-2]",
        "E[wbar^-6]",
        "E[|DL^-1 F|^3]",
        "E[|D wbar - DF|^3]",
        "E[|D wbar - DF|^(s/2)]",
    ];
    let t = (s / 4) as i32;
    let est = mc_pointwise(&vars, labels.len(), cfg, |v, out| {
        let y = v[0] + alpha;
        out[0] = v[1].powi(-2);
        out[1] = v[1].powi(-2) * y.powi(-2);
        out[2] = v[1].powi(-6);
        out[3] = v[2].max(0.0).powf(1.5);
        out[4] = v[3].max(0.0).powf(1.5);
        out[5] = v[3].powi(t);
        true
    })?;
    let gap_moment = match gap_sq.moment(s / 4) {
        Ok(v) => MomentValue::exact(v),
        Err(Error::OrderBudget { .. }) => MomentValue::mc(&est[5]),
        Err(e) => return Err(e),
    };
    let m_s = gap_moment.value.max(0.0).powf(2.0 / s as f64);
    let cubic = MomentValue::mc(&est[4]);
    let cubic_root = cubic.value.max(0.0).cbrt();
    // Lyapunov only gives E||.||^3^(1/3) <= M_s when s/2 >= 3
    let a4_gap = if s >= 6 { m_s } else { m_s.max(cubic_root) };
    let a4 = est[2].value.cbrt() * est[3].value.cbrt() * a4_gap;
    let poincare = ((s / 2) as f64 - 1.0).sqrt();
    let tail = est[0].value.sqrt() + (1.0 - alpha).abs() * est[1].value.sqrt();
    let mut book = MomentBook::new(f, alpha, cfg);
    let mut rows = Vec::with_capacity(xs.len());
    for (&x, env) in xs.iter().zip(envelopes) {
        let stein_factor = env.l2_factor(|p| book.abs_moment(p))?;
        let prefactor = poincare * (stein_factor + tail);
        let bound = prefactor * m_s + a4;
        rows.push(BoundRow { x, branch: env.branch, envelope: env, stein_factor, prefactor, bound, density_mc: None, density_target: None });
    }
    let negative: BTreeMap<String, McEstimate> = labels[..3].iter().map(|l| l.to_string()).zip(est[..3].iter().cloned()).collect();
    flag_unstable(&negative, &mut warnings);
    let rho = 1.0 - 3.0 / s as f64;
    Ok(BoundReport {
        kind: BoundKind::GeneralFunctional { s },
        alpha,
        q: None,
        k: 0,
        fourth_moment_combo: None,
        theta_var: None,
        radical: m_s,
        c1: None,
        negative_moments: negative,
        positive_moments: book.into_map(),
        remainder: None,
        general: Some(GeneralTerms {
            s,
            p: 2.0 / rho,
            r: 4.0 / rho,
            grad_gap: gap_moment,
            grad_gap_cubic: cubic,
            inverse_gradient_cubic: est[3].clone(),
            wbar_mean,
        }),
        rows,
        warnings,
        mc: *cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::SecondChaosSpec;

    #[test]
    fn precheck_counts_weights() {
        let f = SecondChaosSpec::uniform(12, 0.5).to_chaos();
        let c = NegativeMomentCheck::second_chaos(&f, 6.0).unwrap().unwrap();
        assert_eq!(c.positive, 12);
        assert!(c.at_edge);
        assert!(c.finite(0.0, 4.0));
        assert!(!c.finite(2.0, 4.0));
        let few = SecondChaosSpec::uniform(4, 0.5).to_chaos();
        let c = NegativeMomentCheck::second_chaos(&few, 2.0).unwrap().unwrap();
        assert!(c.require(0.0, 2.0, "E[(F+alpha)^-2]").is_err());
        assert!(NegativeMomentCheck::second_chaos(&f, 5.0).is_err());
        let neg = ChaosVector::from_kernel(SymTensor::diagonal(&[0.5, -0.1]));
        assert!(NegativeMomentCheck::second_chaos(&neg, 1.0).is_err());
    }

    #[test]
    fn tight_case_bound_is_zero() {
        let spec = SecondChaosSpec::uniform(12, 0.5);
        let f = spec.to_chaos();
        let r = assemble_fourth_moment_bound(&f, 6.0, &[2.0, 6.0, -1.0, 0.0], &McConfig::new(20_000, 1)).unwrap();
        assert!(r.fourth_moment_combo.unwrap().abs() < 1e-10);
        assert!(r.rows.iter().all(|row| row.bound == 0.0));
        assert_eq!(r.c1, Some(2.0));
    }

    #[test]
    fn odd_order_is_refused() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(2);
        let f = ChaosVector::from_kernel(SymTensor::random(3, 3, &mut rng));
        let a = f.second_moment();
        assert!(matches!(assemble_fourth_moment_bound(&f, a, &[1.0], &McConfig::new(100, 1)), Err(Error::Refused(_))));
    }

    #[test]
    fn mixed_spec_moments() {
        let m = MixedSpec::edge(10);
        let f = m.to_chaos();
        assert!(f.expectation().abs() < 1e-15);
        assert!((f.second_moment() - m.alpha()).abs() < 1e-12);
        assert!(m.gap().abs() < 1e-12);
        let z: [f64; 11] = [0.3, -1.2, 0.5, 0.1, 2.0, -0.7, 0.4, 1.1, -0.2, 0.9, 0.05];
        let direct = m.beta * z[0].powi(4) + m.zeta.iter().zip(&z[1..]).map(|(a, x)| a * x * x).sum::<f64>() + m.gap();
        assert!((f.eval(&z) + m.alpha() - direct).abs() < 1e-12);
    }

    #[test]
    fn general_bound_on_second_chaos() {
        let spec = SecondChaosSpec::with_matched_alpha(vec![0.7; 14]).unwrap();
        let f = spec.to_chaos();
        let r = assemble_general_bound(&f, spec.alpha, 8, &[spec.alpha], &McConfig::new(20_000, 4)).unwrap();
        let g = r.general.as_ref().unwrap();
        assert!((g.wbar_mean - spec.alpha).abs() < 1e-10);
        assert_eq!(g.grad_gap.method, "exact");
        assert!(r.rows[0].bound.is_finite() && r.rows[0].bound > 0.0);
    }
}
