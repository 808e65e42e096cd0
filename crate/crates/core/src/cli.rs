//! Command-line front end: analyze a model through the LMI/BMI pipeline,
//! verify a certificate file, run Monte Carlo simulations, sweep the moment
//! order p, and list builtin models. All reports are JSON documents written
//! atomically; they embed the exact input matrices and every seed used.
//!
//! Exit codes: 0 = stable / verified, 2 = not certified (infeasible at p = 2
//! or no heuristic success, or failed verification), 1 = usage or I/O error.

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use serde_json::json;
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::heuristic::{self, HeuristicConfig};
use crate::model::{self, LinearSDESystem};
use crate::sdp::{self, SdpStatus};
use crate::simulate::{self, SimulationConfig};
use crate::verify::{self, StabilityCertificate, VerifyMethod};
use crate::bmi;

/// Writes a file atomically: write to a sibling temp file, then rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().map(|s| s.to_string_lossy()).unwrap_or_default(),
        std::process::id()
    ));
    let io_err = |e| Error::Io {
        path: path.display().to_string(),
        source: e,
    };
    {
        let mut f = std::fs::File::create(&tmp).map_err(io_err)?;
        f.write_all(contents.as_bytes()).map_err(io_err)?;
        f.sync_all().map_err(io_err)?;
    }
    std::fs::rename(&tmp, path).map_err(io_err)
}

#[derive(Parser)]
#[command(
    name = "gbmstab",
    version,
    about = "Stability solver and verifier for multivariate geometric Brownian motion"
)]
pub struct CliArgs {
    #[command(subcommand)]
    command: Command,
}

/// Model selection shared by every analysis command.
#[derive(Args)]
struct ModelArgs {
    /// Path to a model file (JSON with fields name, n, ell, A, B).
    #[arg(long, conflicts_with = "builtin")]
    model: Option<PathBuf>,
    /// Name of a builtin model (see `gbmstab list`).
    #[arg(long)]
    builtin: Option<String>,
    /// Builtin parameter override, k=v (repeatable).
    #[arg(long = "param", value_name = "K=V")]
    params: Vec<String>,
}

impl ModelArgs {
    fn resolve(&self) -> Result<LinearSDESystem> {
        match (&self.model, &self.builtin) {
            (Some(path), None) => model::load_system(path),
            (None, Some(name)) => {
                let mut overrides = BTreeMap::new();
                for kv in &self.params {
                    let (k, v) = kv.split_once('=').ok_or_else(|| {
                        Error::InvalidParameter(format!("--param expects k=v, got '{kv}'"))
                    })?;
                    let value: f64 = v.parse().map_err(|_| {
                        Error::InvalidParameter(format!("parameter '{k}' has non-numeric value '{v}'"))
                    })?;
                    overrides.insert(k.to_string(), value);
                }
                model::builtin(name)?.build(&overrides)
            }
            _ => Err(Error::InvalidParameter(
                "exactly one of --model or --builtin is required".into(),
            )),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Decide exponential p-stability: p=2 LMI, spectral cross-check, BMI heuristic.
    Analyze {
        #[command(flatten)]
        model: ModelArgs,
        /// Moment order (repeatable; default 2).
        #[arg(long = "p")]
        p: Vec<f64>,
        /// Normalization level for Q ⪰ εI and c ≥ ε.
        #[arg(long, default_value_t = 0.01)]
        eps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the JSON analysis report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a certificate file against a model.
    Verify {
        #[command(flatten)]
        model: ModelArgs,
        /// Certificate file (JSON with p, eps, Q and optional c, gram).
        #[arg(long)]
        certificate: PathBuf,
        /// gram | sphere | both.
        #[arg(long, default_value = "both")]
        method: String,
        /// Sphere sample count (0 = default).
        #[arg(long, default_value_t = 0)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo moment estimation with fitted decay rates.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        /// Moment order (repeatable; default 2).
        #[arg(long = "p")]
        p: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        paths: usize,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Feasibility across a grid of moment orders.
    Sweep {
        #[command(flatten)]
        model: ModelArgs,
        /// Comma-separated moment orders, e.g. 0.1,0.5,1,2.
        #[arg(long = "p-grid", value_delimiter = ',', required = true)]
        p_grid: Vec<f64>,
        #[arg(long, default_value_t = 0.01)]
        eps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List builtin models and their parameters.
    List,
}

fn mat_json(m: &DMatrix<f64>) -> serde_json::Value {
    json!((0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect::<Vec<f64>>())
        .collect::<Vec<_>>())
}

fn system_json(sys: &LinearSDESystem) -> serde_json::Value {
    json!({
        "name": sys.name,
        "n": sys.n,
        "ell": sys.ell,
        "A": mat_json(&sys.a),
        "B": sys.b.iter().map(mat_json).collect::<Vec<_>>(),
        "metadata": sys.metadata,
    })
}

fn parse_matrix(rows: &[Vec<f64>], label: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(Error::Parse {
            path: label.to_string(),
            message: "matrix rows must be non-empty and of equal length".into(),
        });
    }
    Ok(DMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j]))
}

/// On-disk certificate: nested row-major arrays like model files. `c` and
/// `gram` are optional; a missing `c` is recomputed as the best SOS bound.
#[derive(Deserialize)]
struct CertificateFile {
    p: f64,
    eps: f64,
    #[serde(default)]
    c: Option<f64>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(default)]
    gram: Option<Vec<Vec<f64>>>,
}

pub fn load_certificate(
    path: &Path,
    sys: &LinearSDESystem,
    ip: &sdp::IpConfig,
) -> Result<StabilityCertificate> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let file: CertificateFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let q = parse_matrix(&file.q, "Q")?;
    let gram = file.gram.as_deref().map(|g| parse_matrix(g, "gram")).transpose()?;
    match file.c {
        Some(c) => Ok(StabilityCertificate {
            p: file.p,
            eps: file.eps,
            c,
            q,
            gram,
        }),
        None => StabilityCertificate::with_computed_c(sys, &q, file.p, file.eps, ip),
    }
}

pub fn certificate_json(cert: &StabilityCertificate) -> serde_json::Value {
    let mut v = json!({
        "p": cert.p,
        "eps": cert.eps,
        "c": cert.c,
        "Q": mat_json(&cert.q),
    });
    if let Some(g) = &cert.gram {
        v["gram"] = mat_json(g);
    }
    v
}

fn emit(out: &Option<PathBuf>, report: &serde_json::Value) -> Result<()> {
    let text = format!("{:#}\n", report);
    match out {
        Some(path) => write_atomic(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn status_str(s: SdpStatus) -> &'static str {
    match s {
        SdpStatus::Feasible => "feasible",
        SdpStatus::Infeasible => "infeasible",
        SdpStatus::Inconclusive => "inconclusive",
    }
}

fn default_ps(ps: Vec<f64>) -> Vec<f64> {
    if ps.is_empty() {
        vec![2.0]
    } else {
        ps
    }
}

fn cmd_analyze(
    model: &ModelArgs,
    ps: Vec<f64>,
    eps: f64,
    seed: u64,
    out: &Option<PathBuf>,
) -> Result<i32> {
    let sys = model.resolve()?;
    let ps = default_ps(ps);
    let started = Instant::now();
    let cfg = HeuristicConfig {
        seed,
        ..HeuristicConfig::default()
    };
    let commutativity = model::commutativity_report(&sys, 1e-10);
    let spectral = verify::mean_square_spectral_test(&sys);
    let lmi = sdp::solve_lmi_feasibility(&bmi::assemble_lmi_p2(&sys, eps)?, &cfg.ip)?;

    let mut per_p = Vec::new();
    let mut all_feasible = true;
    for &p in &ps {
        let t0 = Instant::now();
        // Infeasibility is only decidable at p = 2, where the condition is an
        // exact LMI; elsewhere a failed heuristic means Unknown.
        if p == 2.0 && lmi.status == SdpStatus::Infeasible {
            per_p.push(json!({
                "p": p,
                "status": "infeasible",
                "note": "p=2 LMI is infeasible (exact)",
                "seconds": t0.elapsed().as_secs_f64(),
            }));
            all_feasible = false;
            continue;
        }
        let sol = heuristic::solve_bmi(&sys, p, eps, &cfg)?;
        match sol {
            Some(sol) => {
                let cert = StabilityCertificate::from_solution(&sol, p, eps);
                let report =
                    verify::verify_certificate(&sys, &cert, VerifyMethod::Both, 0, seed, &cfg.ip)?;
                let status = if report.pass { "feasible" } else { "unverified" };
                if !report.pass {
                    all_feasible = false;
                }
                per_p.push(json!({
                    "p": p,
                    "status": status,
                    "certificate": certificate_json(&cert),
                    "verification": report,
                    "solver": {
                        "seed_used": sol.seed_used,
                        "outer_iterations": sol.outer_iterations,
                        "seeds_tried": sol.seeds_tried,
                        "c_normalized": sol.c_normalized,
                    },
                    "seconds": t0.elapsed().as_secs_f64(),
                }));
            }
            None => {
                all_feasible = false;
                per_p.push(json!({
                    "p": p,
                    "status": "unknown",
                    "note": "heuristic found no certificate (incomplete for p != 2)",
                    "seconds": t0.elapsed().as_secs_f64(),
                }));
            }
        }
    }

    let report = json!({
        "command": "analyze",
        "system": system_json(&sys),
        "eps": eps,
        "seed": seed,
        "commuting": {
            "fully_commuting": commutativity.fully_commuting,
            "a_b_commute": commutativity.a_b_commute,
            "b_b_commute": commutativity.b_b_commute,
        },
        "lmi_p2": { "status": status_str(lmi.status), "margin": lmi.margin },
        "spectral": { "abscissa": spectral.abscissa, "mean_square_stable": spectral.stable },
        "per_p": per_p,
        "seconds": started.elapsed().as_secs_f64(),
    });
    emit(out, &report)?;
    Ok(if all_feasible { 0 } else { 2 })
}

fn cmd_verify(
    model: &ModelArgs,
    certificate: &Path,
    method: &str,
    samples: usize,
    seed: u64,
    out: &Option<PathBuf>,
) -> Result<i32> {
    let sys = model.resolve()?;
    let method: VerifyMethod = method.parse()?;
    let ip = sdp::IpConfig::default();
    let cert = load_certificate(certificate, &sys, &ip)?;
    let report = verify::verify_certificate(&sys, &cert, method, samples, seed, &ip)?;
    let pass = report.pass;
    let doc = json!({
        "command": "verify",
        "system": system_json(&sys),
        "certificate": certificate_json(&cert),
        "seed": seed,
        "verification": report,
    });
    emit(out, &doc)?;
    Ok(if pass { 0 } else { 2 })
}

fn cmd_simulate(
    model: &ModelArgs,
    ps: Vec<f64>,
    paths: usize,
    dt: f64,
    horizon: f64,
    seed: u64,
    out: &Option<PathBuf>,
) -> Result<i32> {
    let sys = model.resolve()?;
    let ps = default_ps(ps);
    let cfg = SimulationConfig {
        paths,
        dt,
        horizon,
        seed,
        records: 50,
    };
    let x0 = DVector::from_element(sys.n, 1.0);
    let mut runs = Vec::new();
    for &p in &ps {
        let stats = simulate::euler_maruyama(&sys, &x0, p, &cfg)?;
        let rate = simulate::fit_decay_rate(&stats.times, &stats.moment_mean).ok();
        runs.push(json!({
            "p": p,
            "times": stats.times,
            "moment_mean": stats.moment_mean,
            "moment_se": stats.moment_se,
            "blowup_fraction": stats.blowup_fraction,
            "surviving_paths": stats.surviving_paths,
            "fitted_rate": rate,
        }));
    }
    let doc = json!({
        "command": "simulate",
        "system": system_json(&sys),
        "x0": x0.iter().copied().collect::<Vec<f64>>(),
        "paths": paths,
        "dt": dt,
        "horizon": horizon,
        "seed": seed,
        "runs": runs,
    });
    emit(out, &doc)?;
    Ok(0)
}

fn cmd_sweep(
    model: &ModelArgs,
    p_grid: Vec<f64>,
    eps: f64,
    seed: u64,
    out: &Option<PathBuf>,
) -> Result<i32> {
    if p_grid.is_empty() {
        return Err(Error::InvalidParameter("--p-grid must be non-empty".into()));
    }
    let sys = model.resolve()?;
    let cfg = HeuristicConfig {
        seed,
        ..HeuristicConfig::default()
    };
    let points = heuristic::p_sweep(&sys, &p_grid, eps, &cfg)?;
    // At p = 2 the condition is an exact LMI, so a definite infeasible
    // verdict is available there; elsewhere failure stays "unknown".
    let lmi = sdp::solve_lmi_feasibility(&bmi::assemble_lmi_p2(&sys, eps)?, &cfg.ip)?;
    let rows: Vec<serde_json::Value> = points
        .iter()
        .map(|pt| {
            let status = if pt.feasible {
                "feasible"
            } else if pt.p == 2.0 && lmi.status == SdpStatus::Infeasible {
                "infeasible"
            } else {
                "unknown"
            };
            json!({ "p": pt.p, "status": status, "c": pt.c })
        })
        .collect();
    let doc = json!({
        "command": "sweep",
        "system": system_json(&sys),
        "eps": eps,
        "seed": seed,
        "lmi_p2": status_str(lmi.status),
        "table": rows,
    });
    emit(out, &doc)?;
    Ok(0)
}

fn cmd_list() -> Result<i32> {
    for m in model::builtin_models() {
        let params: Vec<String> = m.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("{:20} {}", m.name, params.join(" "));
    }
    Ok(0)
}

/// Installs the global rayon pool honoring GBMSTAB_THREADS, then dispatches.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    if let Ok(threads) = std::env::var("GBMSTAB_THREADS") {
        if let Ok(t) = threads.parse::<usize>() {
            // Ignore the error if a pool already exists (tests, repeat calls).
            let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
        }
    }
    let cli = match CliArgs::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version with success exit codes.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Analyze {
            model,
            p,
            eps,
            seed,
            out,
        } => cmd_analyze(model, p.clone(), *eps, *seed, out),
        Command::Verify {
            model,
            certificate,
            method,
            samples,
            seed,
            out,
        } => cmd_verify(model, certificate, method, *samples, *seed, out),
        Command::Simulate {
            model,
            p,
            paths,
            dt,
            horizon,
            seed,
            out,
        } => cmd_simulate(model, p.clone(), *paths, *dt, *horizon, *seed, out),
        Command::Sweep {
            model,
            p_grid,
            eps,
            seed,
            out,
        } => cmd_sweep(model, p_grid.clone(), *eps, *seed, out),
        Command::List => cmd_list(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
