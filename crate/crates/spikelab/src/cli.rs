//! Command-line front end: phase diagnostics, limit parameters, Monte Carlo
//! experiments from a config file, and spike detection on CSV data.
//!
//! Exit codes: 0 success, 2 usage/input error, 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::clt::{CltParams, VectorRegime};
use crate::error::{Error, Result};
use crate::estimate::{detect_spikes, DetectionConfig};
use crate::mc::{
    run_clt_experiment, run_detection_experiment, run_universality, CltRun, ExperimentConfig,
};
use crate::model::{build_case1, build_case2, BulkMeasure, PopulationModel};
use crate::sampler::{eigvals_desc, Distribution};
use crate::spectral::{phi, phi_prime, rho};

#[derive(Parser)]
#[command(
    name = "spikelab",
    version,
    about = "Spiked covariance models: phase transitions, eigenvalue fluctuations, spike detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Phase-transition quantities for one spike: φ(α), φ′(α), ρ, regime
    Phase(PhaseArgs),
    /// Limiting-law parameters for one distant spike (κ, θ, ν, β_x, σ²)
    CltParams(CltParamsArgs),
    /// Monte Carlo experiment (clt | detect | universality) from a config file
    Simulate(SimulateArgs),
    /// Estimate spike count, locations and sizes from a CSV file
    Detect(DetectArgs),
}

#[derive(Args)]
struct PhaseArgs {
    /// Population spike eigenvalue α
    #[arg(long)]
    alpha: f64,
    /// Aspect ratio c = p/n
    #[arg(long)]
    c: f64,
    /// Bulk distribution as comma-separated t:w atoms (e.g. "1:0.6,4:0.4")
    #[arg(long, default_value = "1:1")]
    bulk: String,
    /// Directory for result.json + manifest.json (stdout only if omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CltParamsArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    c: f64,
    /// Spike multiplicity
    #[arg(long, default_value_t = 1)]
    multiplicity: usize,
    /// Eigenvector regime: delocalized | diagonal
    #[arg(long, default_value = "delocalized")]
    regime: VectorRegime,
    /// E|x|⁴ of the data entries (only used in the diagonal regime)
    #[arg(long, default_value_t = 3.0)]
    fourth_moment: f64,
    #[arg(long, default_value = "1:1")]
    bulk: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment kind: clt | detect | universality
    #[arg(long)]
    kind: Option<String>,
    /// TOML (or JSON) experiment config; flags below override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    /// Base RNG seed
    #[arg(long, env = "SPIKELAB_SEED")]
    seed: Option<u64>,
    /// Entry distribution: gaussian | rademacher | heavy
    #[arg(long)]
    dist: Option<Distribution>,
    /// First distribution of a universality pair
    #[arg(long)]
    dist_a: Option<Distribution>,
    /// Second distribution of a universality pair
    #[arg(long)]
    dist_b: Option<Distribution>,
    /// Seed of the second universality run (default derives a stream set
    /// disjoint from the first run's for any replication count)
    #[arg(long)]
    seed_b: Option<u64>,
    /// Population design: case1 | case2
    #[arg(long)]
    case: Option<String>,
    /// Toeplitz correlation for case2
    #[arg(long)]
    rho: Option<f64>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Truncate entries at η√n and restandardize before forming S
    #[arg(long)]
    truncate: Option<bool>,
    /// Truncation level η (default n^{-1/6})
    #[arg(long)]
    eta: Option<f64>,
    /// KS test level for universality runs
    #[arg(long)]
    level: Option<f64>,
    /// Detector eigenvector regime: delocalized | diagonal
    #[arg(long)]
    regime: Option<VectorRegime>,
    /// Detector fourth moment (diagonal regime; defaults to the known E|x|⁴)
    #[arg(long)]
    fourth_moment: Option<f64>,
}

#[derive(Args)]
struct DetectArgs {
    /// CSV input: a p×n data matrix (rows = variables) or a single column of
    /// eigenvalues
    input: PathBuf,
    /// Aspect ratio c = p/n (eigenvalue-list input)
    #[arg(long)]
    c: Option<f64>,
    /// Sample count n behind an eigenvalue list
    #[arg(long)]
    n: Option<usize>,
    /// Input matrix is n×p (observations in rows)
    #[arg(long)]
    transpose: bool,
    /// Center and scale each variable before forming S
    #[arg(long, action = clap::ArgAction::Set, default_value_t = true)]
    standardize: bool,
    /// Relative-gap threshold for the local Stieltjes sums
    #[arg(long, default_value_t = 0.2)]
    ratio_threshold: f64,
    /// Acceptance quantiles of the limiting normal
    #[arg(long, default_value_t = 0.05)]
    lower_q: f64,
    #[arg(long, default_value_t = 0.95)]
    upper_q: f64,
    /// Eigenvector regime: delocalized | diagonal
    #[arg(long, default_value = "delocalized")]
    regime: VectorRegime,
    /// E|x|⁴ of the data entries (required in the diagonal regime)
    #[arg(long)]
    fourth_moment: Option<f64>,
    /// Directory for report.json + manifest.json (stdout only if omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parse argv and run; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                2
            } else {
                3
            }
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Phase(args) => cmd_phase(args),
        Command::CltParams(args) => cmd_clt_params(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Detect(args) => cmd_detect(args),
    }
}

// ---------------------------------------------------------------------------
// phase / clt-params

fn cmd_phase(args: PhaseArgs) -> Result<()> {
    let start = Instant::now();
    let bulk = parse_bulk(&args.bulk)?;
    let f = phi(args.alpha, args.c, &bulk)?;
    let fp = phi_prime(args.alpha, args.c, &bulk)?;
    let pt = rho(args.alpha, args.c, &bulk)?;
    let config = json!({ "alpha": args.alpha, "c": args.c, "bulk": bulk_json(&bulk) });
    let doc = json!({
        "alpha": args.alpha,
        "c": args.c,
        "bulk": bulk_json(&bulk),
        "phi": f,
        "phi_prime": fp,
        "rho": pt.rho,
        "regime": pt.regime,
    });
    println!("{}", serde_json::to_string_pretty(&doc)?);
    if let Some(dir) = &args.out {
        write_run(dir, "phase", config, None, start, &[("result.json", serde_json::to_vec_pretty(&doc)?)])?;
    }
    Ok(())
}

fn cmd_clt_params(args: CltParamsArgs) -> Result<()> {
    let start = Instant::now();
    let bulk = parse_bulk(&args.bulk)?;
    let params = CltParams::compute(
        args.alpha,
        args.multiplicity,
        args.c,
        &bulk,
        args.regime,
        args.fourth_moment,
    )?;
    let config = json!({
        "alpha": args.alpha,
        "c": args.c,
        "multiplicity": args.multiplicity,
        "regime": args.regime,
        "fourth_moment": args.fourth_moment,
        "bulk": bulk_json(&bulk),
    });
    let doc = json!({
        "alpha": params.alpha,
        "c": params.c,
        "multiplicity": params.multiplicity,
        "regime": params.regime,
        "phi": params.phi,
        "m_under": params.m_under,
        "m_under2": params.m_under2,
        "m_tilde": params.m_tilde,
        "kappa": params.kappa_s,
        "theta": params.theta,
        "nu": params.nu,
        "beta_x": params.beta_x,
        "var_diag": params.var_diag,
        "var_off": params.var_off,
        "sigma2": params.sigma2,
    });
    println!("{}", serde_json::to_string_pretty(&doc)?);
    if let Some(dir) = &args.out {
        write_run(dir, "clt-params", config, None, start, &[("result.json", serde_json::to_vec_pretty(&doc)?)])?;
    }
    Ok(())
}

fn bulk_json(bulk: &BulkMeasure) -> serde_json::Value {
    json!(bulk.atoms().iter().map(|&(t, w)| json!({ "t": t, "w": w })).collect::<Vec<_>>())
}

/// Parse "t:w,t:w,..." (or a single bare "t" for a point mass).
fn parse_bulk(s: &str) -> Result<BulkMeasure> {
    let parts: Vec<&str> = s.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
    if parts.is_empty() {
        return Err(Error::InvalidParameter("empty bulk specification".into()));
    }
    if parts.len() == 1 && !parts[0].contains(':') {
        return BulkMeasure::point_mass(parse_f64(parts[0])?);
    }
    let mut atoms = Vec::with_capacity(parts.len());
    for part in &parts {
        let (t, w) = part.split_once(':').ok_or_else(|| {
            Error::InvalidParameter(format!("bulk atom '{part}' must have the form t:w"))
        })?;
        atoms.push((parse_f64(t)?, parse_f64(w)?));
    }
    BulkMeasure::new(atoms)
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("'{}' is not a number", s.trim())))
}

// ---------------------------------------------------------------------------
// simulate

/// On-disk experiment config. Every field is optional; CLI flags win.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    kind: Option<String>,
    case: Option<String>,
    rho: Option<f64>,
    p: Option<usize>,
    n: Option<usize>,
    reps: Option<usize>,
    dist: Option<Distribution>,
    dist_a: Option<Distribution>,
    dist_b: Option<Distribution>,
    seed: Option<u64>,
    seed_b: Option<u64>,
    truncate: Option<bool>,
    eta: Option<f64>,
    level: Option<f64>,
    threads: Option<usize>,
    detection: Option<FileDetection>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileDetection {
    ratio_threshold: Option<f64>,
    lower_q: Option<f64>,
    upper_q: Option<f64>,
    regime: Option<VectorRegime>,
    fourth_moment: Option<f64>,
}

/// Fully resolved simulate plan; serialized verbatim into the manifest.
#[derive(Debug, Serialize)]
struct SimPlan {
    kind: String,
    case: String,
    rho: f64,
    p: usize,
    n: usize,
    reps: usize,
    dist: Distribution,
    dist_a: Distribution,
    dist_b: Distribution,
    seed: u64,
    seed_b: u64,
    truncate: bool,
    eta: Option<f64>,
    level: f64,
    detection: DetectionConfig,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = fs::read_to_string(path)?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn merge_plan(args: &SimulateArgs, file: FileConfig) -> Result<SimPlan> {
    let kind = args
        .kind
        .clone()
        .or(file.kind)
        .ok_or_else(|| Error::Config("missing experiment kind (--kind or config `kind`)".into()))?
        .to_ascii_lowercase();
    if !matches!(kind.as_str(), "clt" | "detect" | "universality") {
        return Err(Error::Config(format!(
            "unknown kind '{kind}' (expected clt, detect, or universality)"
        )));
    }
    let case = args.case.clone().or(file.case).unwrap_or_else(|| "case1".into()).to_ascii_lowercase();
    if !matches!(case.as_str(), "case1" | "case2") {
        return Err(Error::Config(format!("unknown case '{case}' (expected case1 or case2)")));
    }
    let p = args.p.or(file.p).unwrap_or(500);
    let n = args.n.or(file.n).unwrap_or(1000);
    if n == 0 {
        return Err(Error::InvalidDimension("n must be >= 1".into()));
    }
    let dist = args.dist.or(file.dist).unwrap_or(Distribution::Gaussian);
    let seed = args.seed.or(file.seed).unwrap_or(12_345);
    let det_file = file.detection.unwrap_or_default();
    let mut detection = DetectionConfig::new(p as f64 / n as f64);
    if let Some(v) = det_file.ratio_threshold {
        detection.ratio_threshold = v;
    }
    if let Some(v) = det_file.lower_q {
        detection.lower_q = v;
    }
    if let Some(v) = det_file.upper_q {
        detection.upper_q = v;
    }
    detection.regime = args.regime.or(det_file.regime).unwrap_or(VectorRegime::Delocalized);
    detection.fourth_moment = args
        .fourth_moment
        .or(det_file.fourth_moment)
        .or_else(|| if detection.regime == VectorRegime::Diagonal { dist.fourth_moment() } else { None });
    Ok(SimPlan {
        kind,
        case,
        rho: args.rho.or(file.rho).unwrap_or(0.5),
        p,
        n,
        reps: args.reps.or(file.reps).unwrap_or(1000),
        dist,
        dist_a: args.dist_a.or(file.dist_a).unwrap_or(Distribution::Gaussian),
        dist_b: args.dist_b.or(file.dist_b).unwrap_or(Distribution::Rademacher),
        seed,
        // rep streams are keyed by seed ^ rep, so a nearby second seed would
        // reuse the first run's streams; flip the top bit instead
        seed_b: args.seed_b.or(file.seed_b).unwrap_or(seed ^ (1 << 63)),
        truncate: args.truncate.or(file.truncate).unwrap_or(false),
        eta: args.eta.or(file.eta),
        level: args.level.or(file.level).unwrap_or(0.01),
        detection,
    })
}

fn build_model(plan: &SimPlan) -> Result<PopulationModel> {
    match plan.case.as_str() {
        "case1" => build_case1(plan.p),
        _ => build_case2(plan.p, plan.rho),
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let start = Instant::now();
    let file = load_config(args.config.as_deref())?;
    let threads = args.threads.or(file.threads);
    let plan = merge_plan(&args, file)?;
    if let Some(k) = threads {
        init_threads(k)?;
    }
    let model = build_model(&plan)?;
    let config = serde_json::to_value(&plan)?;
    let cfg = ExperimentConfig {
        n: plan.n,
        reps: plan.reps,
        dist: plan.dist,
        seed: plan.seed,
        truncate: plan.truncate,
        eta: plan.eta,
    };
    let files: Vec<(&str, Vec<u8>)> = match plan.kind.as_str() {
        "clt" => {
            let run = run_clt_experiment(&model, &cfg)?;
            vec![
                ("summary.json", serde_json::to_vec_pretty(&clt_run_json(&run)?)?),
                ("gamma_samples.csv", run.gamma_csv().into_bytes()),
                ("histograms.csv", histograms_csv(&run).into_bytes()),
            ]
        }
        "detect" => {
            let run = run_detection_experiment(&model, &cfg, &plan.detection)?;
            vec![("detection.json", serde_json::to_vec_pretty(&run)?)]
        }
        _ => {
            let cfg_a = ExperimentConfig { dist: plan.dist_a, ..cfg };
            let cfg_b = ExperimentConfig { dist: plan.dist_b, seed: plan.seed_b, ..cfg };
            let run = run_universality(&model, &cfg_a, &cfg_b, plan.level)?;
            let mut doc = serde_json::to_value(&run)?;
            for key in ["run_a", "run_b"] {
                if let Some(v) = doc.get_mut(key) {
                    strip_gammas(v);
                }
            }
            vec![
                ("universality.json", serde_json::to_vec_pretty(&doc)?),
                ("gamma_a.csv", run.run_a.gamma_csv().into_bytes()),
                ("gamma_b.csv", run.run_b.gamma_csv().into_bytes()),
            ]
        }
    };
    let manifest = write_run(&args.out, "simulate", config, Some(plan.seed), start, &files)?;
    println!("{}", serde_json::to_string_pretty(&manifest)?);
    Ok(())
}

/// CltRun as JSON with the raw per-replication γ rows removed (those live in
/// gamma_samples.csv).
fn clt_run_json(run: &CltRun) -> Result<serde_json::Value> {
    let mut doc = serde_json::to_value(run)?;
    strip_gammas(&mut doc);
    Ok(doc)
}

fn strip_gammas(run_doc: &mut serde_json::Value) {
    if let Some(groups) = run_doc.get_mut("groups").and_then(|g| g.as_array_mut()) {
        for g in groups {
            if let Some(obj) = g.as_object_mut() {
                obj.remove("gammas");
            }
        }
    }
}

/// One row per histogram bin: alpha,rank,bin_lo,bin_hi,count.
fn histograms_csv(run: &CltRun) -> String {
    let mut out = String::from("alpha,rank,bin_lo,bin_hi,count\n");
    for g in &run.groups {
        for (j, &rank) in g.ranks.iter().enumerate() {
            let h = &g.summaries[j].histogram;
            for (b, &count) in h.counts.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{:.17e},{:.17e},{}\n",
                    g.alpha,
                    rank,
                    h.edges[b],
                    h.edges[b + 1],
                    count
                ));
            }
        }
    }
    out
}

fn init_threads(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParameter("threads must be >= 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(k)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

// ---------------------------------------------------------------------------
// detect

fn cmd_detect(args: DetectArgs) -> Result<()> {
    let start = Instant::now();
    let rows = read_csv_matrix(&args.input)?;
    let (eigs, c, n) = if rows[0].len() == 1 {
        let vals: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let p = vals.len();
        let c = match (args.c, args.n) {
            (Some(c), _) => c,
            (None, Some(n)) if n > 0 => p as f64 / n as f64,
            _ => {
                return Err(Error::InvalidParameter(
                    "eigenvalue-list input needs --c or --n".into(),
                ))
            }
        };
        (vals, c, args.n)
    } else {
        let mut mat = to_matrix(rows)?;
        if args.transpose {
            mat = mat.reversed_axes().as_standard_layout().into_owned();
        }
        let (p, n) = mat.dim();
        if n < 2 {
            return Err(Error::InvalidDimension(format!(
                "need at least 2 observations per variable, got {n}"
            )));
        }
        if args.standardize {
            standardize_rows(&mut mat)?;
        }
        let s = mat.dot(&mat.t()) / n as f64;
        (eigvals_desc(&s)?, p as f64 / n as f64, Some(n))
    };
    let det = DetectionConfig {
        c,
        ratio_threshold: args.ratio_threshold,
        lower_q: args.lower_q,
        upper_q: args.upper_q,
        regime: args.regime,
        fourth_moment: args.fourth_moment,
    };
    let report = detect_spikes(&eigs, &det)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(dir) = &args.out {
        let config = json!({
            "input": args.input.display().to_string(),
            "n": n,
            "transpose": args.transpose,
            "standardize": args.standardize,
            "detection": det,
        });
        write_run(dir, "detect", config, None, start, &[(
            "report.json",
            serde_json::to_vec_pretty(&report)?,
        )])?;
    }
    Ok(())
}

/// Strict numeric CSV: every row the same width, every cell a number.
fn read_csv_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(width);
        for cell in line.split(',') {
            let cell = cell.trim();
            row.push(cell.parse::<f64>().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("non-numeric cell '{cell}'"),
            })?);
        }
        if width == 0 {
            width = row.len();
        } else if row.len() != width {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected {width} columns, found {}", row.len()),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse { line: 1, msg: "no data rows".into() });
    }
    Ok(rows)
}

fn to_matrix(rows: Vec<Vec<f64>>) -> Result<Array2<f64>> {
    let p = rows.len();
    let n = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((p, n), flat)
        .map_err(|e| Error::InvalidDimension(format!("matrix shape: {e}")))
}

/// Center each row and scale it to unit sample variance (1/(n−1)).
fn standardize_rows(x: &mut Array2<f64>) -> Result<()> {
    let n = x.ncols() as f64;
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        let mean = row.sum() / n;
        row -= mean;
        let sd = (row.iter().map(|v| v * v).sum::<f64>() / (n - 1.0)).sqrt();
        if !(sd > 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "variable {} has (near-)zero variance",
                i + 1
            )));
        }
        row /= sd;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// manifests and atomic output

#[derive(Debug, Serialize)]
struct RunManifest {
    command: String,
    config: serde_json::Value,
    seed: Option<u64>,
    version: String,
    wall_clock_seconds: f64,
    outputs: Vec<String>,
}

/// Write every output file atomically into `dir`, then the manifest itself.
fn write_run(
    dir: &Path,
    command: &str,
    config: serde_json::Value,
    seed: Option<u64>,
    start: Instant,
    files: &[(&str, Vec<u8>)],
) -> Result<RunManifest> {
    fs::create_dir_all(dir)?;
    let mut outputs = Vec::with_capacity(files.len() + 1);
    for (name, bytes) in files {
        let path = dir.join(name);
        write_atomic(&path, bytes)?;
        outputs.push(path.display().to_string());
    }
    let manifest_path = dir.join("manifest.json");
    outputs.push(manifest_path.display().to_string());
    let manifest = RunManifest {
        command: command.to_string(),
        config,
        seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        outputs,
    };
    write_atomic(&manifest_path, &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
