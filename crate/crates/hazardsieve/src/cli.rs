//! Command-line surface: `fit`, `cv`, `simulate`, `replicate`, and
//! `combine-pvalues`. Primary output goes to stdout (JSON for single fits,
//! CSV for Monte Carlo tables) and is byte-identical for identical flags
//! and seed; a run manifest is written next to `--out` (or to stderr when
//! no output path is given).

use crate::data::{load_dataset_paths, write_dataset, Dataset};
use crate::estimator::{
    bic, cauchy_combine, cv_bandwidth, default_cv_grid, fit, wald, Bandwidth, CvReport, FitConfig,
};
use crate::kernel::Kernel;
use crate::likelihood::QuadratureRule;
use crate::simulate::{calibrate_censoring, run_study, Method, SimConfig, Simulator};
use crate::spline::{default_interior_knot_count, quantile_knots, SplineBasis};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

const CV_LOSS_CONVENTION: &str =
    "per-fold mean negative kernel-weighted log-likelihood, averaged over folds";

#[derive(Parser, Debug)]
#[command(
    name = "hazardsieve",
    version,
    about = "Kernel-weighted sieve estimation for Box-Cox transformed hazards models"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Cap worker threads for replicate-level parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the model to survival + longitudinal CSV files.
    Fit(FitArgs),
    /// Cross-validate the bandwidth and report the loss curve.
    Cv(FitArgs),
    /// Generate one simulated dataset as a survival/longitudinal CSV pair.
    Simulate(SimulateArgs),
    /// Run the Monte Carlo study and emit an RB/ESE/SE/CP table.
    Replicate(ReplicateArgs),
    /// Combine p-values with the Cauchy combination test.
    CombinePvalues(CombineArgs),
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Survival CSV with columns id,time,status.
    #[arg(long)]
    survival: PathBuf,
    /// Longitudinal CSV with columns id,obs_time,z1..zp.
    #[arg(long)]
    longitudinal: PathBuf,
    /// Box-Cox transformation index (0 = proportional, 1 = additive hazards).
    #[arg(long, conflicts_with = "s_grid")]
    s: Option<f64>,
    /// Comma-separated grid of transformation indices; fits every model in
    /// the sweep so CV loss and BIC can pick one.
    #[arg(long)]
    s_grid: Option<String>,
    /// Fixed kernel bandwidth.
    #[arg(long, conflicts_with = "cv")]
    h: Option<f64>,
    /// Select the bandwidth by K-fold cross-validation.
    #[arg(long)]
    cv: bool,
    /// Comma-separated CV bandwidth grid (default: 8 geometric points).
    #[arg(long)]
    grid: Option<String>,
    /// Number of CV folds.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// B-spline order (degree + 1).
    #[arg(long, default_value_t = 3)]
    spline_order: usize,
    /// Comma-separated interior knots; fractions like 1/3 are accepted.
    #[arg(long, conflicts_with = "num_knots")]
    interior_knots: Option<String>,
    /// Place this many knots at quantiles of the observed follow-up times.
    #[arg(long)]
    num_knots: Option<usize>,
    /// Constrain the spline to zero curvature at the boundaries (order >= 4).
    #[arg(long)]
    natural: bool,
    /// Kernel family (only epanechnikov ships).
    #[arg(long, default_value = "epanechnikov")]
    kernel: Kernel,
    /// Gauss-Legendre nodes per quadrature piece.
    #[arg(long, default_value_t = 16)]
    quad_nodes: usize,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-7)]
    grad_tol: f64,
    /// Positivity safeguard: the hazard value at which the transform
    /// switches to its exponential extension. Raise (e.g. to 1e-4) if fits
    /// with barrier contact fail to converge.
    #[arg(long, default_value_t = 1e-8)]
    floor_eps: f64,
    /// Seed for the CV fold shuffle.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the primary output here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    s: f64,
    #[arg(long)]
    n: usize,
    /// Target censoring proportion, e.g. 0.2 or 0.3.
    #[arg(long)]
    censor: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output prefix; writes <out>_survival.csv and <out>_longitudinal.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReplicateArgs {
    #[arg(long)]
    s: f64,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    censor: f64,
    #[arg(long)]
    reps: usize,
    /// Comma-separated methods: smkle04,smkle05,smklecv,lvcf.
    #[arg(long, default_value = "smkle04,smkle05,smklecv,lvcf")]
    methods: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the CSV table here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CombineArgs {
    /// p-values, each strictly inside (0, 1).
    #[arg(required = true)]
    pvalues: Vec<f64>,
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    args: Vec<String>,
    seed: Option<u64>,
    version: String,
    elapsed_seconds: f64,
}

/// Round to `digits` significant digits (identity for zero or non-finite).
fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let magnitude = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(digits - 1 - magnitude);
    (x * scale).round() / scale
}

fn json_num(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(round_sig(x, 6))
    } else {
        serde_json::Value::Null
    }
}

fn fmt_sig(x: f64) -> String {
    if x.is_finite() {
        format!("{}", round_sig(x, 6))
    } else {
        "NA".to_string()
    }
}

fn parse_knot_token(token: &str) -> Result<f64, String> {
    let token = token.trim();
    if let Some((num, den)) = token.split_once('/') {
        let num: f64 = num
            .trim()
            .parse()
            .map_err(|_| format!("bad knot '{token}'"))?;
        let den: f64 = den
            .trim()
            .parse()
            .map_err(|_| format!("bad knot '{token}'"))?;
        if den == 0.0 {
            return Err(format!("bad knot '{token}'"));
        }
        Ok(num / den)
    } else {
        token.parse().map_err(|_| format!("bad knot '{token}'"))
    }
}

fn parse_list(list: &str) -> Result<Vec<f64>, String> {
    list.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(parse_knot_token)
        .collect()
}

fn effective_seed(flag: u64) -> u64 {
    match std::env::var("HAZARDSIEVE_SEED") {
        Ok(v) => v.parse().unwrap_or(flag),
        Err(_) => flag,
    }
}

fn resolve_basis(args: &FitArgs, data: &Dataset) -> Result<SplineBasis, String> {
    let boundary = (0.0, data.tau());
    let interior = if let Some(list) = &args.interior_knots {
        parse_list(list)?
    } else {
        let count = args
            .num_knots
            .unwrap_or_else(|| default_interior_knot_count(data.n()));
        let xs: Vec<f64> = data.subjects().iter().map(|s| s.x).collect();
        quantile_knots(&xs, count, boundary)
    };
    SplineBasis::new(args.spline_order, &interior, boundary, args.natural)
        .map_err(|e| e.to_string())
}

fn write_manifest(
    command: &str,
    args: &[String],
    seed: Option<u64>,
    started: Instant,
    out: Option<&PathBuf>,
) {
    let manifest = Manifest {
        command: command.to_string(),
        args: args.to_vec(),
        seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        elapsed_seconds: started.elapsed().as_secs_f64(),
    };
    let body = serde_json::to_string_pretty(&manifest).expect("manifest is serializable");
    match out {
        Some(path) => {
            let manifest_path = path.with_extension("manifest.json");
            if let Err(e) = std::fs::write(&manifest_path, body) {
                eprintln!(
                    "warning: could not write manifest {}: {e}",
                    manifest_path.display()
                );
            }
        }
        None => eprintln!("{body}"),
    }
}

fn emit(primary: &str, out: Option<&PathBuf>) -> Result<(), String> {
    println!("{primary}");
    if let Some(path) = out {
        std::fs::write(path, format!("{primary}\n")).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn cv_report_json(report: &CvReport) -> serde_json::Value {
    json!({
        "grid": report.grid.iter().map(|&h| json_num(h)).collect::<Vec<_>>(),
        "mean_loss": report.mean_loss.iter().map(|&l| json_num(l)).collect::<Vec<_>>(),
        "chosen_h": json_num(report.chosen_h),
        "fold_count": report.fold_count,
        "loss_convention": CV_LOSS_CONVENTION,
    })
}

fn fit_one_model(
    args: &FitArgs,
    data: &Dataset,
    basis: &SplineBasis,
    s: f64,
    seed: u64,
    emit_fit: bool,
) -> Result<(serde_json::Value, bool), String> {
    let grid = match &args.grid {
        Some(g) => parse_list(g)?,
        None => default_cv_grid(data.n()),
    };
    let mut config = FitConfig::new(s, Bandwidth::Fixed(1.0), basis.clone());
    config.transform = crate::transform::BoxCox::with_floor(s, args.floor_eps);
    config.quad = QuadratureRule::new(args.quad_nodes);
    config.max_iter = args.max_iter;
    config.grad_tol = args.grad_tol;

    let cv_report = if args.cv || !emit_fit {
        Some(cv_bandwidth(data, &config, &grid, args.folds, seed).map_err(|e| e.to_string())?)
    } else {
        None
    };

    if !emit_fit {
        let report = cv_report.expect("cv path computes a report");
        return Ok((cv_report_json(&report), true));
    }

    let h = match (&cv_report, args.h) {
        (Some(report), _) => report.chosen_h,
        (None, Some(h)) => h,
        (None, None) => return Err("provide --h or --cv".to_string()),
    };
    config.bandwidth = Bandwidth::Fixed(h);
    let result = fit(data, &config).map_err(|e| e.to_string())?;
    let rows = wald(&result).map_err(|e| e.to_string())?;

    let curve: Vec<serde_json::Value> = result
        .baseline_curve(basis, 101)
        .iter()
        .map(|&(_, alpha)| json_num(alpha))
        .collect();
    let mut body = json!({
        "beta": result.beta_hat.iter().map(|&b| json_num(b)).collect::<Vec<_>>(),
        "se": rows.iter().map(|r| json_num(r.se)).collect::<Vec<_>>(),
        "z": rows.iter().map(|r| json_num(r.z)).collect::<Vec<_>>(),
        "p": rows.iter().map(|r| json_num(r.p_value)).collect::<Vec<_>>(),
        "ci_lo": rows.iter().map(|r| json_num(r.ci_lower)).collect::<Vec<_>>(),
        "ci_hi": rows.iter().map(|r| json_num(r.ci_upper)).collect::<Vec<_>>(),
        "loglik": json_num(result.loglik),
        "bic": json_num(bic(&result, data)),
        "h_used": json_num(result.h_used),
        "converged": result.converged,
        "barrier_touched": result.barrier_touched,
        "alpha_curve": curve,
    });
    if let Some(report) = &cv_report {
        body["cv"] = cv_report_json(report);
    }
    Ok((body, result.converged))
}

fn run_fit(args: &FitArgs, emit_fit: bool) -> Result<u8, String> {
    let data = load_dataset_paths(&args.survival, &args.longitudinal).map_err(|e| e.to_string())?;
    let basis = resolve_basis(args, &data)?;
    let seed = effective_seed(args.seed);
    let s_values: Vec<f64> = match (&args.s, &args.s_grid) {
        (Some(s), None) => vec![*s],
        (None, Some(grid)) => parse_list(grid)?,
        (None, None) => return Err("provide --s or --s-grid".to_string()),
        (Some(_), Some(_)) => unreachable!("clap forbids both"),
    };
    if s_values.is_empty() || s_values.iter().any(|&s| s < 0.0) {
        return Err("transformation indices must be nonnegative".to_string());
    }

    let mut all_converged = true;
    let mut bodies = Vec::with_capacity(s_values.len());
    for &s in &s_values {
        let (mut body, converged) = fit_one_model(args, &data, &basis, s, seed, emit_fit)?;
        all_converged &= converged;
        if args.s_grid.is_some() {
            body["s"] = json_num(s);
        }
        bodies.push(body);
    }
    let output = if args.s_grid.is_some() {
        serde_json::Value::Array(bodies)
    } else {
        bodies.pop().expect("one model")
    };
    let text = serde_json::to_string_pretty(&output).unwrap();
    emit(&text, args.out.as_ref())?;
    Ok(if all_converged { 0 } else { 2 })
}

fn run_simulate(args: &SimulateArgs) -> Result<u8, String> {
    let seed = effective_seed(args.seed);
    let mut cfg = SimConfig::new(args.s, args.n, args.censor, seed);
    let c_lower = calibrate_censoring(&cfg, args.censor, 100_000).map_err(|e| e.to_string())?;
    cfg.c_lower = Some(c_lower);
    let sim = Simulator::new(cfg.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1); // same stream as replicate 0 of the study harness
    let data = sim.dataset(&mut rng).map_err(|e| e.to_string())?;

    let surv_path = args.out.with_file_name(format!(
        "{}_survival.csv",
        args.out
            .file_name()
            .and_then(|f| f.to_str())
            .unwrap_or("sim")
    ));
    let long_path = args.out.with_file_name(format!(
        "{}_longitudinal.csv",
        args.out
            .file_name()
            .and_then(|f| f.to_str())
            .unwrap_or("sim")
    ));
    let mut surv = std::fs::File::create(&surv_path).map_err(|e| e.to_string())?;
    let mut long = std::fs::File::create(&long_path).map_err(|e| e.to_string())?;
    write_dataset(&data, &mut surv, &mut long).map_err(|e| e.to_string())?;

    let summary = json!({
        "n": data.n(),
        "events": data.events(),
        "c_lower": json_num(c_lower),
        "survival": surv_path.display().to_string(),
        "longitudinal": long_path.display().to_string(),
    });
    println!("{}", serde_json::to_string_pretty(&summary).unwrap());
    Ok(0)
}

fn run_replicate(args: &ReplicateArgs) -> Result<u8, String> {
    let seed = effective_seed(args.seed);
    let methods: Vec<Method> = args
        .methods
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<Method>())
        .collect::<Result<_, _>>()?;
    if methods.is_empty() {
        return Err("no methods requested".to_string());
    }
    let cfg = SimConfig::new(args.s, args.n, args.censor, seed);
    let reports = run_study(&cfg, args.reps, &methods).map_err(|e| e.to_string())?;

    let mut table = String::from("method,coef,RB,ESE,SE,CP,failures\n");
    for report in &reports {
        for (k, coef) in report.coef.iter().enumerate() {
            let se = coef.se.map_or("NA".to_string(), fmt_sig);
            let cp = if coef.cp.is_finite() {
                format!("{:.1}", coef.cp)
            } else {
                "NA".to_string()
            };
            writeln!(
                table,
                "{},beta{},{},{},{},{},{}",
                report.method.label(),
                k + 1,
                fmt_sig(coef.rb),
                fmt_sig(coef.ese),
                se,
                cp,
                report.failures
            )
            .unwrap();
        }
    }
    let table = table.trim_end();
    emit(table, args.out.as_ref())?;
    Ok(0)
}

fn run_combine(args: &CombineArgs) -> Result<u8, String> {
    let combined = cauchy_combine(&args.pvalues).map_err(|e| e.to_string())?;
    println!("{}", fmt_sig(combined));
    Ok(0)
}

fn with_pool<F>(threads: Option<usize>, f: F) -> Result<u8, String>
where
    F: FnOnce() -> Result<u8, String> + Send,
{
    match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| e.to_string())?
            .install(f),
        None => f(),
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn run<I, T>(raw_args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = raw_args.into_iter().map(Into::into).collect();
    let arg_strings: Vec<String> = argv
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let cli = match Cli::try_parse_from(argv.clone()) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version with success exits
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };

    let started = Instant::now();
    let threads = cli.threads;

    let (name, seed, out, outcome) = match &cli.command {
        Command::Fit(args) => (
            "fit",
            Some(effective_seed(args.seed)),
            args.out.clone(),
            with_pool(threads, || run_fit(args, true)),
        ),
        Command::Cv(args) => (
            "cv",
            Some(effective_seed(args.seed)),
            args.out.clone(),
            with_pool(threads, || run_fit(args, false)),
        ),
        Command::Simulate(args) => (
            "simulate",
            Some(effective_seed(args.seed)),
            Some(args.out.clone()),
            run_simulate(args),
        ),
        Command::Replicate(args) => (
            "replicate",
            Some(effective_seed(args.seed)),
            args.out.clone(),
            with_pool(threads, || run_replicate(args)),
        ),
        Command::CombinePvalues(args) => ("combine-pvalues", None, None, run_combine(args)),
    };

    match outcome {
        Ok(code) => {
            write_manifest(name, &arg_strings, seed, started, out.as_ref());
            code
        }
        Err(message) => {
            eprintln!("error: {message}");
            1
        }
    }
}
