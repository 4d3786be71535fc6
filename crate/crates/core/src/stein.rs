//! Gamma Stein equation y f'(y) + (alpha - y) f(y) = h(y) - E h(G) for the
//! indicator-times-nu test functions, with pointwise envelopes for |f| and |f'|.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::chaos::ChaosVector;
use crate::error::{Error, Result};
use crate::gamma::GammaTarget;
use crate::hermite::binomial;
use crate::quadrature::{integrate, integrate_power_singular, integrate_tail};
use crate::simulate::{mc_expect, Functional, McConfig, McEstimate, Weight};

pub const QUAD_TOL: f64 = 1e-13;
/// Grid points closer than this to the origin are skipped by residual checks.
pub const EXCLUSION_RADIUS: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// h = 1{y > x} nu_{k+1}, x > 0
    Positive,
    /// h = 1{y <= x} nu_{k+1}, x < 0
    Negative,
    /// h = 1{y < 0} nu_{k+1}, x = 0
    Origin,
}

impl Branch {
    pub fn of(x: f64) -> Branch {
        if x > 0.0 {
            Branch::Positive
        } else if x < 0.0 {
            Branch::Negative
        } else {
            Branch::Origin
        }
    }
}

/// The Stein problem for one (alpha, k, x).
#[derive(Clone, Copy, Debug)]
pub struct SteinProblem {
    target: GammaTarget,
    k: usize,
    x: f64,
    branch: Branch,
    eh: f64,
}

impl SteinProblem {
    pub fn new(alpha: f64, k: usize, x: f64) -> Result<Self> {
        let target = GammaTarget::new(alpha)?;
        if !x.is_finite() {
            return Err(Error::invalid("threshold must be finite"));
        }
        let branch = Branch::of(x);
        if branch == Branch::Origin && alpha <= (k + 1) as f64 {
            return Err(Error::domain(format!(
                "the origin test function needs alpha > k + 1, got alpha = {alpha}, k = {k}"
            )));
        }
        let mut p = SteinProblem { target, k, x, branch, eh: 0.0 };
        if branch == Branch::Positive {
            p.eh = p.expected_h()?;
        }
        Ok(p)
    }

    pub fn alpha(&self) -> f64 {
        self.target.alpha()
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    /// E h(G) for G ~ Gamma(alpha).
    pub fn eh(&self) -> f64 {
        self.eh
    }

    fn expected_h(&self) -> Result<f64> {
        let a = self.alpha();
        let lg = ln_gamma(a);
        let t = self.target;
        let k = self.k;
        let dens = move |s: f64| t.nu(k + 1, s) * ((a - 1.0) * s.ln() - s - lg).exp();
        integrate_tail(dens, self.x, QUAD_TOL)
    }

    pub fn h(&self, y: f64) -> f64 {
        let hit = match self.branch {
            Branch::Positive => y > self.x,
            Branch::Negative => y <= self.x,
            Branch::Origin => y < 0.0,
        };
        if hit {
            self.target.nu(self.k + 1, y)
        } else {
            0.0
        }
    }

    /// f(y) for y != 0.
    pub fn f(&self, y: f64) -> Result<f64> {
        if y == 0.0 || !y.is_finite() {
            return Err(Error::domain("the Stein solution is defined on the punctured real line"));
        }
        let a = self.alpha();
        let g = |t: f64| self.h(t) - self.eh;
        match self.branch {
            Branch::Positive if y > self.x => {
                // tail form, using that h - Eh integrates to zero against the Gamma density
                let v = integrate_tail(|u: f64| (y + u).powf(a - 1.0) * (-u).exp() * g(y + u), 0.0, QUAD_TOL)?;
                Ok(-v * y.powf(-a))
            }
            Branch::Positive => {
                let v = integrate_power_singular(a, |u: f64| (y * (1.0 - u)).exp(), 1.0, QUAD_TOL)?;
                Ok(-self.eh * v)
            }
            Branch::Negative => {
                if y >= self.x {
                    return Ok(0.0);
                }
                let lo = self.x / y;
                integrate(|u: f64| u.powf(a - 1.0) * (y * (1.0 - u)).exp() * g(y * u), lo, 1.0, QUAD_TOL)
            }
            Branch::Origin => {
                if y > 0.0 {
                    return Ok(0.0);
                }
                self.origin_integral(y, false)
            }
        }
    }

    /// int_0^1 u^{alpha-1} e^{y(1-u)} nu_{k+1}(yu) du for y < 0, or its y-derivative
    /// int_0^1 u^{alpha-1} e^{y(1-u)} [(1-u) nu_{k+1}(yu) + u nu'_{k+1}(yu)] du.
    fn origin_integral(&self, y: f64, derivative: bool) -> Result<f64> {
        let m = (self.k + 1) as f64;
        let t = self.target;
        let k = self.k;
        let psi = move |u: f64| {
            if u == 0.0 {
                // limit of u^{k+1} nu_{k+1}(y u), times (1 - (k+1)/y) for the derivative
                let top = t.nu_abs_coeffs(k + 1)[k + 1] * t.shifted_product(k + 1).signum();
                let sign = if (k + 1) % 2 == 1 { 1.0 } else { -1.0 };
                let v = sign * top * y.powi(-(k as i32) - 1) * y.exp();
                return if derivative { v * (1.0 - m / y) } else { v };
            }
            let e = u.powf(m) * (y * (1.0 - u)).exp();
            if derivative {
                e * ((1.0 - u) * t.nu(k + 1, y * u) + u * t.nu_prime(k + 1, y * u))
            } else {
                e * t.nu(k + 1, y * u)
            }
        };
        integrate_power_singular(self.alpha() - m, psi, 1.0, QUAD_TOL)
    }

    /// f'(y) = (1 - alpha/y) f(y) + (h(y) - Eh)/y.
    pub fn fprime(&self, y: f64) -> Result<f64> {
        let f = self.f(y)?;
        Ok((1.0 - self.alpha() / y) * f + (self.h(y) - self.eh) / y)
    }

    /// Points where f' is discontinuous.
    fn kinks(&self) -> Vec<f64> {
        match self.branch {
            Branch::Origin => vec![0.0],
            _ => vec![0.0, self.x],
        }
    }

    /// y f'(y) + (alpha - y) f(y) - (h(y) - Eh), with f' by finite differences of f.
    /// Left of the origin on the origin branch, f' is instead differentiated under
    /// the integral: f grows like |y|^{-(k+1)} there and difference quotients lose
    /// too many digits.
    pub fn residual(&self, y: f64) -> Result<f64> {
        if self.branch == Branch::Origin && y < 0.0 {
            let d = self.origin_integral(y, true)?;
            let f = self.f(y)?;
            return Ok(y * d + (self.alpha() - y) * f - (self.h(y) - self.eh));
        }
        let step = 2.5e-4 * y.abs();
        let dist = self.kinks().iter().map(|k| (y - k).abs()).fold(f64::INFINITY, f64::min);
        let d = if dist > 4.0 * step {
            let fm2 = self.f(y - 2.0 * step)?;
            let fm1 = self.f(y - step)?;
            let fp1 = self.f(y + step)?;
            let fp2 = self.f(y + 2.0 * step)?;
            (fm2 - 8.0 * fm1 + 8.0 * fp1 - fp2) / (12.0 * step)
        } else {
            // one-sided toward the side whose h matches h(y)
            let left = self.kinks().iter().any(|&k| k > y && k - y <= 4.0 * step)
                || (y == self.x && self.branch != Branch::Origin);
            let s = if left { -step } else { step };
            let v: Vec<f64> = (0..5).map(|i| self.f(y + i as f64 * s)).collect::<Result<_>>()?;
            (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]) / (12.0 * s)
        };
        let f = self.f(y)?;
        Ok(y * d + (self.alpha() - y) * f - (self.h(y) - self.eh))
    }

    pub fn envelope(&self) -> Envelope {
        envelope_for(self)
    }
}

/// Pointwise bound max(|f|, |f'|)(y) <= sum coef * |y|^power.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub alpha: f64,
    pub k: usize,
    pub x: f64,
    pub branch: Branch,
    /// named coefficients: (d1, d2, d3), (e1, e2) or the origin series
    pub coefficients: Vec<(String, f64)>,
    pub terms: Vec<EnvelopeTerm>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeTerm {
    pub coef: f64,
    pub power: f64,
}

impl Envelope {
    pub fn eval(&self, y: f64) -> f64 {
        self.terms.iter().map(|t| t.coef * y.abs().powf(t.power)).sum()
    }

    /// sum coef * E[|Y|^(2 power)]^(1/2), an upper bound for E[env(Y)^2]^(1/2).
    pub fn l2_factor<M: FnMut(f64) -> Result<f64>>(&self, mut abs_moment: M) -> Result<f64> {
        let mut total = 0.0;
        for t in &self.terms {
            let m = if t.power == 0.0 { 1.0 } else { abs_moment(2.0 * t.power)? };
            total += t.coef * m.max(0.0).sqrt();
        }
        Ok(total)
    }
}

fn envelope_for(p: &SteinProblem) -> Envelope {
    let a = p.alpha();
    let k = p.k;
    let x = p.x;
    let ca = a.ceil() as usize;
    let t = p.target;
    // |nu_{k+1}(y)| <= sum c_i |y|^{-i}, |nu_k(y)| <= sum c1_i |y|^{-i}
    let c: Vec<f64> = (0..=k + 1).map(|i| binomial(k + 1, i) * t.shifted_product(i).abs()).collect();
    let c1: Vec<f64> = (0..=k).map(|i| binomial(k, i) * t.shifted_product(i).abs()).collect();
    let pn = |n: usize| (1..n).fold(1.0, |acc, m| acc * (a - m as f64).abs());
    let mut terms = Vec::new();
    let coefficients;
    match p.branch {
        Branch::Positive => {
            let e = p.eh.abs();
            let lead = x.powf(-a) + a * x.powf(-a - 1.0);
            let d1 = (1..ca).map(|n| e * lead * pn(n)).fold(0.0, f64::max);
            let d2 = e * (3.0 + x.exp());
            let rem = if a.fract() == 0.0 { 0.0 } else { pn(ca + 1) * x.powf(a - ca as f64) / (ca as f64 - a) };
            let a1b = (1.0 / x + a / (x * x)) * c1.iter().enumerate().map(|(i, ci)| ci * x.powi(-(i as i32))).sum::<f64>();
            let d3 = e / a
                + e * x.exp() / a
                + a1b
                + e * lead * (pn(ca) * x.powf(a - ca as f64) + rem)
                + c.iter().enumerate().map(|(i, ci)| ci * x.powi(-(i as i32) - 1)).sum::<f64>()
                + e / x;
            for n in 1..ca {
                terms.push(EnvelopeTerm { coef: d1, power: a - n as f64 });
            }
            terms.push(EnvelopeTerm { coef: d2, power: -1.0 });
            terms.push(EnvelopeTerm { coef: d3, power: 0.0 });
            coefficients = vec![("d1".into(), d1), ("d2".into(), d2), ("d3".into(), d3)];
        }
        Branch::Negative => {
            let ax = x.abs();
            let mut ei: Vec<f64> = c
                .iter()
                .enumerate()
                .map(|(i, ci)| if (a - i as f64) == 0.0 { 0.0 } else { ci / (a - i as f64).abs() })
                .collect();
            for (i, ci) in c.iter().enumerate() {
                if a == i as f64 {
                    // log(|y|/|x|) <= (|y|/|x|)^alpha / (alpha e)
                    ei[0] += ci * ax.powf(-a) / (a * std::f64::consts::E);
                }
            }
            let lead = ax.powf(-a) + a * ax.powf(-a - 1.0);
            let top = (ca.max(1) - 1).min(k + 1);
            let e1 = lead * ei[..=top].iter().cloned().fold(0.0, f64::max);
            let low: f64 = ei.iter().enumerate().map(|(i, e)| e * ax.powf(a - i as f64)).sum();
            let high: f64 = ei.iter().enumerate().skip(ca).map(|(i, e)| e * ax.powf(a - i as f64)).sum();
            let e2 = lead * (low + high) + c.iter().enumerate().map(|(i, ci)| ci * ax.powi(-(i as i32) - 1)).sum::<f64>();
            for i in 0..ca.max(1) {
                terms.push(EnvelopeTerm { coef: e1, power: a - i as f64 });
            }
            terms.push(EnvelopeTerm { coef: e2, power: 0.0 });
            coefficients = vec![("e1".into(), e1), ("e2".into(), e2)];
        }
        Branch::Origin => {
            // |f(y)| <= sum a_i |y|^{-i}, a_i = c_i / (alpha - i)
            let ai: Vec<f64> = c.iter().enumerate().map(|(i, ci)| ci / (a - i as f64)).collect();
            let mut named = Vec::new();
            for j in 0..=k + 2 {
                let mut g = ai.get(j).copied().unwrap_or(0.0);
                if j > 0 {
                    g += a * ai[j - 1] + c[j - 1];
                }
                terms.push(EnvelopeTerm { coef: g, power: -(j as f64) });
                named.push((format!("g{j}"), g));
            }
            coefficients = named;
        }
    }
    Envelope { alpha: a, k, x, branch: p.branch, coefficients, terms }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteinSolution {
    pub alpha: f64,
    pub k: usize,
    pub x: f64,
    pub eh: f64,
    pub grid: Vec<f64>,
    pub f_values: Vec<f64>,
    pub fprime_values: Vec<f64>,
    /// NaN inside the exclusion radius
    pub residuals: Vec<f64>,
    pub envelope_values: Vec<f64>,
    pub envelope: Envelope,
}

impl SteinSolution {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().filter(|r| !r.is_nan()).fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Grid points where max(|f|, |f'|) exceeds the envelope.
    pub fn envelope_violations(&self) -> Vec<f64> {
        (0..self.grid.len())
            .filter(|&i| {
                let m = self.f_values[i].abs().max(self.fprime_values[i].abs());
                m > self.envelope_values[i] * (1.0 + 1e-12)
            })
            .map(|i| self.grid[i])
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "y,f,fprime,residual,envelope")?;
        for i in 0..self.grid.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                self.grid[i], self.f_values[i], self.fprime_values[i], self.residuals[i], self.envelope_values[i]
            )?;
        }
        Ok(())
    }
}

pub fn solve(alpha: f64, k: usize, x: f64, grid: &[f64]) -> Result<SteinSolution> {
    let p = SteinProblem::new(alpha, k, x)?;
    if grid.iter().any(|y| *y == 0.0 || !y.is_finite()) {
        return Err(Error::invalid("grid must exclude 0 and be finite"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("grid must be strictly increasing"));
    }
    use rayon::prelude::*;
    let rows: Vec<(f64, f64, f64)> = grid
        .par_iter()
        .map(|&y| {
            let f = p.f(y)?;
            let fp = p.fprime(y)?;
            let r = if y.abs() >= EXCLUSION_RADIUS { p.residual(y)? } else { f64::NAN };
            Ok((f, fp, r))
        })
        .collect::<Result<_>>()?;
    let env = p.envelope();
    Ok(SteinSolution {
        alpha,
        k,
        x,
        eh: p.eh,
        grid: grid.to_vec(),
        f_values: rows.iter().map(|r| r.0).collect(),
        fprime_values: rows.iter().map(|r| r.1).collect(),
        residuals: rows.iter().map(|r| r.2).collect(),
        envelope_values: grid.iter().map(|&y| env.eval(y)).collect(),
        envelope: env,
    })
}

pub fn envelope(alpha: f64, k: usize, x: f64) -> Result<Envelope> {
    Ok(SteinProblem::new(alpha, k, x)?.envelope())
}

/// Symmetric log-spaced grid on [-hi, -lo] and [lo, hi].
pub fn log_grid(lo: f64, hi: f64, per_side: usize) -> Vec<f64> {
    let n = per_side.max(2);
    let r = (hi / lo).ln();
    let pos: Vec<f64> = (0..n).map(|i| lo * (r * i as f64 / (n - 1) as f64).exp()).collect();
    pos.iter().rev().map(|y| -y).chain(pos.iter().copied()).collect()
}

/// How a moment of F + alpha was obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MomentSource {
    Exact,
    /// upper bound E[|F + alpha|^order]^{p/order} with the integer moment exact
    Lyapunov { order: usize },
    MonteCarlo { estimate: McEstimate },
}

/// E[(F + alpha)^n] for n = 0..=max and F = sum zeta_i (Z_i^2 - 1), from the cumulants
/// kappa_1 = alpha, kappa_n = 2^{n-1} (n-1)! sum zeta_i^n.
pub fn second_chaos_raw_moments(zeta: &[f64], alpha: f64, max: usize) -> Vec<f64> {
    let mut kappa = vec![0.0; max + 1];
    if max >= 1 {
        kappa[1] = alpha;
    }
    let mut c = 1.0;
    for n in 2..=max {
        c *= 2.0 * (n - 1) as f64;
        kappa[n] = c * zeta.iter().map(|z| z.powi(n as i32)).sum::<f64>();
    }
    let mut m = vec![1.0; max + 1];
    for n in 1..=max {
        m[n] = (1..=n).map(|j| binomial(n - 1, j - 1) * kappa[j] * m[n - j]).sum();
    }
    m
}

/// E[|F + alpha|^p]. Positive moments are exact, or a Lyapunov upper bound from the
/// next integer moment, whenever that integer moment is available exactly
/// (always for the second chaos); everything else is Monte Carlo.
pub fn shifted_abs_moment(f: &ChaosVector, alpha: f64, p: f64, cfg: &McConfig) -> Result<(f64, MomentSource)> {
    if p == 0.0 {
        return Ok((1.0, MomentSource::Exact));
    }
    let finish = |m: f64, order: usize| {
        if order as f64 == p {
            (m, MomentSource::Exact)
        } else {
            (m.max(0.0).powf(p / order as f64), MomentSource::Lyapunov { order })
        }
    };
    if p > 0.0 {
        let even = 2 * (p / 2.0).ceil() as usize;
        if let Some(w) = f.second_chaos_weights() {
            let scale = alpha.abs().max(1.0);
            let nonneg = w.iter().all(|&z| z >= -1e-12 * scale) && alpha >= w.iter().sum::<f64>() - 1e-9 * scale;
            let order = if nonneg { p.ceil() as usize } else { even };
            return Ok(finish(second_chaos_raw_moments(&w, alpha, order)[order], order));
        }
        if let Ok(m) = f.add_constant(alpha).moment(even) {
            return Ok(finish(m, even));
        }
    }
    let est = mc_expect(f, Functional::AbsPower { shift: alpha, exponent: p }, cfg)?;
    Ok((est.value, MomentSource::MonteCarlo { estimate: est }))
}

/// Both sides of the Stein estimate for one threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteinDiscrepancy {
    pub alpha: f64,
    pub k: usize,
    pub x: f64,
    /// E[h(F + alpha)] by Monte Carlo
    pub lhs_mc: McEstimate,
    /// E[h(G)]
    pub eh: f64,
    /// |E h(F + alpha) - E h(G)|
    pub lhs: f64,
    /// envelope factor times E[(F + alpha - <DF, -DL^{-1}F>)^2]^{1/2}
    pub rhs: f64,
    pub envelope_factor: f64,
    pub gamma_distance: f64,
    /// Monte Carlo moments used by the envelope factor
    pub mc_moments: Vec<McEstimate>,
}

/// E[(F + alpha - <DF, -DL^{-1}F>)^2] from the engine.
pub fn gamma_distance_sq(f: &ChaosVector, alpha: f64) -> Result<f64> {
    let wbar = f.malliavin_d().inner(&f.inverse_l().scale(-1.0).malliavin_d())?;
    let diff = f.add_constant(alpha).sub(&wbar)?;
    Ok(diff.second_moment())
}

pub fn stein_discrepancy(f: &ChaosVector, alpha: f64, k: usize, x: f64, cfg: &McConfig) -> Result<SteinDiscrepancy> {
    if f.expectation().abs() > 1e-10 {
        return Err(Error::domain("F must be centered"));
    }
    if (f.second_moment() - alpha).abs() > 1e-8 * alpha.max(1.0) {
        return Err(Error::domain("E[F^2] must equal alpha"));
    }
    let p = SteinProblem::new(alpha, k, x)?;
    let weight = Weight::Nu { alpha, k: k + 1 };
    let g = match p.branch {
        Branch::Positive => Functional::IndicatorAbove { x, shift: alpha, weight },
        // 1{y <= x}: the boundary has probability zero for a continuous law
        Branch::Negative => Functional::IndicatorBelow { x, shift: alpha, weight },
        Branch::Origin => Functional::IndicatorBelow { x: 0.0, shift: alpha, weight },
    };
    let lhs_mc = mc_expect(f, g, cfg)?;
    let env = p.envelope();
    let mut mc_moments = Vec::new();
    let factor = env.l2_factor(|q| {
        let (v, src) = shifted_abs_moment(f, alpha, q, cfg)?;
        if let MomentSource::MonteCarlo { estimate } = src {
            mc_moments.push(estimate);
        }
        Ok(v)
    })?;
    let gamma_distance = gamma_distance_sq(f, alpha)?.max(0.0).sqrt();
    Ok(SteinDiscrepancy {
        alpha,
        k,
        x,
        lhs: (lhs_mc.value - p.eh).abs(),
        eh: p.eh,
        lhs_mc,
        rhs: factor * gamma_distance,
        envelope_factor: factor,
        gamma_distance,
        mc_moments,
    })
}
