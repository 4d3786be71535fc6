use anyhow::Result;
use gammachaos::bounds::{
    assemble_derivative_bound, assemble_fourth_moment_bound, assemble_general_bound, fourth_moment_combo, theta,
    BoundReport,
};
use gammachaos::identities::{exact_identity_suite, operator_suite, Check};
use gammachaos::simulate::{density_cf_oracle, density_kde, density_malliavin};
use gammachaos::stein::{log_grid, solve};
use gammachaos::{Branch, Error, McEstimate};
use serde::Serialize;
use serde_json::json;

use crate::config::{invalid, Command, Estimator, Resolved, RunConfig, BoundForm};

/// Files produced by a command, plus the names of any checks that failed.
#[derive(Default)]
pub struct Output {
    pub files: Vec<(String, Vec<u8>)>,
    pub failed: Vec<String>,
}

impl Output {
    fn json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
        bytes.push(b'\n');
        self.files.push((name.into(), bytes));
    }

    fn raw(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }
}

/// Multiple of the Monte Carlo standard error allowed when checking domination.
pub const DOMINATION_SIGMAS: f64 = 4.0;

pub fn run(cmd: Command, cfg: &RunConfig) -> Result<Output> {
    match cmd {
        Command::Moments => moments(cfg),
        Command::Bound => bound(cfg),
        Command::Density => density(cfg),
        Command::Stein => stein(cfg),
        Command::Verify => verify(cfg),
        Command::Report => report(cfg),
    }
}

fn moments_value(r: &Resolved) -> Result<serde_json::Value> {
    let f = &r.f;
    let m: Vec<f64> = (1..=4).map(|p| f.moment(p)).collect::<gammachaos::Result<_>>()?;
    let q = f.pure_order();
    if let Some(q) = q.filter(|q| q % 2 == 1) {
        return Err(Error::refused(format!(
            "chaos order {q} is odd: Gamma approximation in a single chaos is only available for even orders"
        ))
        .into());
    }
    let (combo, theta_var) = match q {
        Some(_) => (Some(fourth_moment_combo(f, r.alpha)?), Some(theta(f, r.alpha)?.variance())),
        None => (None, None),
    };
    Ok(json!({
        "alpha": r.alpha,
        "q": q,
        "E[F]": m[0],
        "E[F^2]": m[1],
        "E[F^3]": m[2],
        "E[F^4]": m[3],
        "fourth_moment_combo": combo,
        "theta_var": theta_var,
    }))
}

fn moments(cfg: &RunConfig) -> Result<Output> {
    let r = cfg.resolve()?;
    let mut out = Output::default();
    out.json("moments.json", &moments_value(&r)?);
    Ok(out)
}

fn bound_report(cfg: &RunConfig, r: &Resolved) -> Result<BoundReport> {
    let mc = cfg.mc.config();
    let mut rep = match cfg.form {
        BoundForm::FourthMoment if cfg.k == 0 => assemble_fourth_moment_bound(&r.f, r.alpha, &cfg.xs, &mc)?,
        BoundForm::FourthMoment => assemble_derivative_bound(&r.f, r.alpha, cfg.k, &cfg.xs, &mc)?,
        BoundForm::General => {
            if cfg.k != 0 {
                return Err(invalid("the general-functional bound is for densities only (k = 0)"));
            }
            assemble_general_bound(&r.f, r.alpha, cfg.s, &cfg.xs, &mc)?
        }
    };
    rep.attach_densities(&r.f, &mc)?;
    Ok(rep)
}

fn domination_failures(rep: &BoundReport) -> Vec<String> {
    rep.rows
        .iter()
        .filter_map(|row| {
            let e = row.density_mc.as_ref()?;
            let diff = row.abs_diff()?;
            (diff > row.bound + DOMINATION_SIGMAS * e.stderr).then(|| format!("domination at x = {}", row.x))
        })
        .collect()
}

fn bound(cfg: &RunConfig) -> Result<Output> {
    let r = cfg.resolve()?;
    let rep = bound_report(cfg, &r)?;
    let mut out = Output::default();
    let mut csv = Vec::new();
    rep.write_csv(&mut csv)?;
    out.raw("bound.csv", csv);
    out.json("bound.json", &rep);
    out.failed = domination_failures(&rep);
    Ok(out)
}

#[derive(Serialize)]
struct DensityRow {
    x: f64,
    estimate: f64,
    stderr: f64,
    n: u64,
}

fn density(cfg: &RunConfig) -> Result<Output> {
    let r = cfg.resolve()?;
    let mc = cfg.mc.config();
    let (rows, estimates): (Vec<DensityRow>, Vec<McEstimate>) = match cfg.estimator {
        Estimator::Malliavin => {
            let est = density_malliavin(&r.f, r.alpha, cfg.k, &cfg.xs, &mc)?;
            (mc_rows(&cfg.xs, &est), est)
        }
        Estimator::Kde => {
            if cfg.k != 0 {
                return Err(invalid("the kernel density estimator only estimates the density itself (k = 0)"));
            }
            let est = density_kde(&r.f, r.alpha, &cfg.xs, cfg.bandwidth, &mc)?;
            (mc_rows(&cfg.xs, &est), est)
        }
        Estimator::Cf => {
            let spec = r.second_chaos.as_ref().ok_or_else(|| invalid("the characteristic-function oracle needs a second_chaos spec"))?;
            if cfg.k != 0 {
                return Err(invalid("the characteristic-function oracle only evaluates the density itself (k = 0)"));
            }
            let vals = density_cf_oracle(spec, &cfg.xs)?;
            let rows = cfg.xs.iter().zip(vals).map(|(&x, v)| DensityRow { x, estimate: v, stderr: 0.0, n: 0 }).collect();
            (rows, Vec::new())
        }
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row)?;
    }
    let mut out = Output::default();
    out.raw("density.csv", w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?);
    let rejected = estimates.iter().map(|e| e.rejected).max().unwrap_or(0);
    let unstable: Vec<f64> = cfg.xs.iter().zip(&estimates).filter(|(_, e)| !e.is_trustworthy()).map(|(&x, _)| x).collect();
    out.json(
        "density.json",
        &json!({
            "estimator": cfg.estimator,
            "k": cfg.k,
            "alpha": r.alpha,
            "rejected": rejected,
            "rejection_rate": if estimates.is_empty() { 0.0 } else { rejected as f64 / mc.n as f64 },
            "unstable_points": unstable,
            "estimates": estimates,
        }),
    );
    Ok(out)
}

fn mc_rows(xs: &[f64], est: &[McEstimate]) -> Vec<DensityRow> {
    xs.iter().zip(est).map(|(&x, e)| DensityRow { x, estimate: e.value, stderr: e.stderr, n: e.n }).collect()
}

fn stein(cfg: &RunConfig) -> Result<Output> {
    let alpha = match (cfg.alpha, &cfg.spec) {
        (Some(a), _) => a,
        (None, Some(_)) => cfg.resolve()?.alpha,
        (None, None) => return Err(invalid("the stein command needs alpha")),
    };
    let st = &cfg.stein;
    let hi = st.hi.unwrap_or_else(|| (4.0 * alpha).max(20.0).max(2.0 * st.x.abs()));
    let grid = log_grid(st.lo, hi, st.per_side);
    let sol = solve(alpha, cfg.k, st.x, &grid)?;
    let max_res = sol.max_residual();
    let violations = sol.envelope_violations();
    let mut failed = Vec::new();
    if !(max_res <= cfg.tolerances.stein_residual) {
        failed.push(format!("residual {max_res:e} exceeds {:e}", cfg.tolerances.stein_residual));
    }
    if !violations.is_empty() {
        failed.push(format!("envelope exceeded at {} grid points", violations.len()));
    }
    let right_max = if sol.envelope.branch == Branch::Negative {
        let m = sol.grid.iter().zip(&sol.f_values).filter(|(y, _)| **y >= st.x && **y != 0.0).fold(0.0f64, |m, (_, f)| m.max(f.abs()));
        if m != 0.0 {
            failed.push(format!("solution is not zero to the right of x (max |f| = {m:e})"));
        }
        Some(m)
    } else {
        None
    };
    let mut out = Output::default();
    let mut csv = Vec::new();
    sol.write_csv(&mut csv)?;
    out.raw("stein.csv", csv);
    out.json(
        "stein.json",
        &json!({
            "alpha": alpha,
            "k": cfg.k,
            "x": st.x,
            "branch": sol.envelope.branch,
            "eh": sol.eh,
            "max_residual": max_res,
            "residual_tol": cfg.tolerances.stein_residual,
            "envelope_violations": violations,
            "max_abs_right_of_x": right_max,
            "envelope": sol.envelope,
            "passed": failed.is_empty(),
        }),
    );
    out.failed = failed;
    Ok(out)
}

fn verify(cfg: &RunConfig) -> Result<Output> {
    let v = &cfg.verify;
    let mut checks: Vec<Check> = exact_identity_suite(v.seed, v.second_cases, v.quartic_cases)?;
    checks.extend(operator_suite(v.seed.wrapping_add(1), v.operator_cases)?);
    for c in &mut checks {
        c.tol = if c.name == "lambda_recursion" { cfg.tolerances.recursion } else { cfg.tolerances.identity };
        c.passed = c.cases > 0 && c.max_err <= c.tol;
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in &checks {
        w.serialize(c)?;
    }
    let mut out = Output::default();
    out.raw("verify.csv", w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?);
    out.failed = checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    out.json("verify.json", &json!({ "passed": out.failed.is_empty(), "checks": checks }));
    Ok(out)
}

#[derive(Serialize)]
struct ReportRow {
    x: f64,
    density_mc: f64,
    stderr: f64,
    density_target: f64,
    abs_diff: f64,
    bound: f64,
    dominated: bool,
}

fn report(cfg: &RunConfig) -> Result<Output> {
    let r = cfg.resolve()?;
    let moments = moments_value(&r)?;
    let rep = bound_report(cfg, &r)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rep.rows {
        let e = row.density_mc.as_ref().expect("densities attached");
        let diff = row.abs_diff().expect("densities attached");
        w.serialize(ReportRow {
            x: row.x,
            density_mc: e.value,
            stderr: e.stderr,
            density_target: row.density_target.expect("densities attached"),
            abs_diff: diff,
            bound: row.bound,
            dominated: diff <= row.bound + DOMINATION_SIGMAS * e.stderr,
        })?;
    }
    let mut out = Output::default();
    out.raw("report.csv", w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?);
    out.json("report.json", &json!({ "moments": moments, "bound": rep }));
    out.failed = domination_failures(&rep);
    Ok(out)
}
