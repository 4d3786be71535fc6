mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use config::{parse_spec_arg, Command, ConfigError, Estimator, RunConfig, BoundForm};

const OUT_ENV: &str = "GAMMACHAOS_OUT";
const DEFAULT_OUT: &str = "gammachaos-out";

#[derive(Parser)]
#[command(name = "gammachaos", version, about = "Gamma approximation toolkit for Gaussian chaos functionals")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Exact moments, fourth-moment combination and Var(Theta)
    Moments(Flags),
    /// Pointwise density bounds with Monte Carlo density differences
    Bound(Flags),
    /// Density (or derivative) estimates on a grid
    Density(Flags),
    /// Stein equation solution, residuals and envelope
    Stein(Flags),
    /// Randomized exact-identity suite
    Verify(Flags),
    /// Moments and bounds in one table
    Report(Flags),
}

#[derive(Args, Default)]
struct Flags {
    /// JSON run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// spec as inline JSON or a path to a JSON file
    #[arg(long)]
    spec: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    /// comma-separated grid
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    xs: Option<Vec<f64>>,
    /// derivative order
    #[arg(long)]
    k: Option<usize>,
    /// Monte Carlo sample count
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chunk_size: Option<u64>,
    /// output directory (overrides the config and GAMMACHAOS_OUT)
    #[arg(long)]
    out: Option<PathBuf>,
    /// worker threads; results do not depend on this
    #[arg(long)]
    workers: Option<usize>,
    /// fourth-moment (single even chaos) or general (finite chaos sum)
    #[arg(long, value_enum)]
    form: Option<BoundForm>,
    /// integrability exponent of the general bound (4, 8 or 12)
    #[arg(long)]
    s: Option<usize>,
    #[arg(long, value_enum)]
    estimator: Option<Estimator>,
    #[arg(long)]
    bandwidth: Option<f64>,
    /// threshold point for the stein command
    #[arg(long, allow_hyphen_values = true)]
    x: Option<f64>,
}

fn build_config(cmd: Command, flags: &Flags) -> Result<RunConfig> {
    let mut cfg = match &flags.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(c) = cfg.command {
        if c != cmd {
            return Err(config::invalid(format!("config is for command {c:?}, not {cmd:?}")));
        }
    }
    cfg.command = Some(cmd);
    if let Some(s) = &flags.spec {
        cfg.spec = Some(parse_spec_arg(s)?);
    }
    let base = flags.config.as_deref().and_then(Path::parent);
    cfg.inline_spec(if flags.spec.is_some() { None } else { base })?;
    macro_rules! set {
        ($flag:ident => $($field:tt)+) => {
            if let Some(v) = flags.$flag.clone() {
                cfg.$($field)+ = v;
            }
        };
    }
    if let Some(a) = flags.alpha {
        cfg.alpha = Some(a);
    }
    set!(xs => xs);
    set!(k => k);
    set!(n => mc.n);
    set!(seed => mc.seed);
    set!(chunk_size => mc.chunk_size);
    set!(form => form);
    set!(s => s);
    set!(estimator => estimator);
    set!(bandwidth => bandwidth);
    set!(x => stein.x);
    cfg.validate(cmd)?;
    Ok(cfg)
}

fn output_dir(flags: &Flags, cfg: &RunConfig) -> PathBuf {
    flags
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn write_outputs(dir: &Path, cmd: Command, cfg: &RunConfig, out: &commands::Output) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut files = Vec::new();
    for (name, bytes) in &out.files {
        std::fs::write(dir.join(name), bytes).with_context(|| format!("writing {name}"))?;
        files.push(json!({ "name": name, "sha256": hex::encode(Sha256::digest(bytes)), "bytes": bytes.len() }));
    }
    let manifest = json!({
        "tool": "gammachaos",
        "version": env!("CARGO_PKG_VERSION"),
        "command": cmd,
        "seed": cfg.mc.seed,
        "n": cfg.mc.n,
        "chunk_size": cfg.mc.chunk_size,
        "config_hash": cfg.hash(),
        "config": cfg,
        "files": files,
        "status": if out.failed.is_empty() { "ok" } else { "checks_failed" },
        "failed_checks": out.failed,
    });
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    std::fs::write(dir.join("manifest.json"), bytes).context("writing manifest.json")?;
    Ok(())
}

fn execute(cmd: Command, flags: &Flags) -> Result<commands::Output> {
    let cfg = build_config(cmd, flags)?;
    let work = || commands::run(cmd, &cfg);
    let out = match flags.workers {
        Some(0) => return Err(config::invalid("workers must be positive")),
        Some(w) => rayon::ThreadPoolBuilder::new().num_threads(w).build()?.install(work)?,
        None => work()?,
    };
    write_outputs(&output_dir(flags, &cfg), cmd, &cfg, &out)?;
    Ok(out)
}

/// Exit code and error kind for a failure.
fn classify(e: &anyhow::Error) -> (u8, &'static str) {
    if let Some(err) = e.downcast_ref::<gammachaos::Error>() {
        return match err {
            gammachaos::Error::Numerical(_) => (2, "numerical"),
            gammachaos::Error::Refused(_) => (3, "refused"),
            _ => (1, "validation"),
        };
    }
    if e.downcast_ref::<ConfigError>().is_some() || e.downcast_ref::<serde_json::Error>().is_some() {
        return (1, "validation");
    }
    (2, "runtime")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, flags) = match &cli.command {
        Cmd::Moments(f) => (Command::Moments, f),
        Cmd::Bound(f) => (Command::Bound, f),
        Cmd::Density(f) => (Command::Density, f),
        Cmd::Stein(f) => (Command::Stein, f),
        Cmd::Verify(f) => (Command::Verify, f),
        Cmd::Report(f) => (Command::Report, f),
    };
    match execute(cmd, flags) {
        Ok(out) if out.failed.is_empty() => ExitCode::SUCCESS,
        Ok(out) => {
            let body = json!({ "error": { "kind": "check_failed", "exit_code": 2, "failed": out.failed } });
            eprintln!("{body}");
            ExitCode::from(2)
        }
        Err(e) => {
            let (code, kind) = classify(&e);
            let body = json!({ "error": { "kind": kind, "exit_code": code, "message": format!("{e:#}") } });
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}
