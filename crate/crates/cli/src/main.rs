use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use icsieve::data::load_dataset;
use icsieve::estimator::FitResult;
use icsieve::simulation::generate::{verify_case_rate, CALIBRATION_BRACKET};
use icsieve::simulation::{calibrate_end_of_study, run_study, Scenario, StudyConfig};
use icsieve::update::{BootstrapConfig, UpdateAnalysis, UpdateResult};
use icsieve::{CohortDataset, Error, FitConfig, ModelSpec, SamplingDesign, SieveConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

const THREADS_ENV: &str = "ICSIEVE_THREADS";
const VERIFICATION_SUBJECTS: usize = 100_000;

#[derive(Parser)]
#[command(name = "icsieve", version, about = "Case-cohort Cox regression for interval-censored data")]
struct Cli {
    /// Worker threads (defaults to $ICSIEVE_THREADS, then to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the IPW and update estimators to a case-cohort data file.
    Fit(FitArgs),
    /// Run a Monte Carlo study from a scenario file.
    Simulate(SimulateArgs),
    /// Find the end-of-study time giving a target case rate.
    Calibrate(CalibrateArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Working {
    Aux,
    Z,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
struct FitArgs {
    /// Input CSV (id,left,right,xi,eta,zeta,z:...,xstar:...,x:...).
    data: PathBuf,
    #[arg(long, required_unless_present = "estimate_design")]
    qs: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    qc: f64,
    /// Plug in the empirical selection fractions instead of --qs/--qc.
    #[arg(long)]
    estimate_design: bool,
    #[arg(long, default_value_t = 3)]
    degree: usize,
    #[arg(long, default_value_t = 500)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// BFGS iteration cap for every fit.
    #[arg(long, default_value_t = FitConfig::default().max_iterations)]
    max_iterations: usize,
    /// Working model; defaults to aux when the file has xstar columns.
    #[arg(long, value_enum)]
    working: Option<Working>,
    /// JSON report path (defaults to standard output only).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug)]
struct SimulateArgs {
    /// Study file (TOML).
    config: PathBuf,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "study-out")]
    out_dir: PathBuf,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
struct CalibrateArgs {
    /// Study file whose scenario is calibrated; the default scenario otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Index of the scenario in the study file.
    #[arg(long, default_value_t = 0)]
    scenario: usize,
    #[arg(long)]
    target_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = CALIBRATION_BRACKET.0)]
    lower: f64,
    #[arg(long, default_value_t = CALIBRATION_BRACKET.1)]
    upper: f64,
}

#[derive(Args, Clone, Debug)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Output directory for replayed artifacts.
    #[arg(long)]
    out_dir: PathBuf,
}

/// What was run, with everything needed to run it again.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", content = "config", rename_all = "lowercase")]
enum Resolved {
    Fit(FitArgs),
    Simulate(StudyConfig),
    Calibrate { args: CalibrateArgs, scenario: Scenario },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunManifest {
    #[serde(flatten)]
    resolved: Resolved,
    seed: u64,
    version: String,
    wall_time_secs: f64,
    /// SHA-256 of the input file (fit) or of the resolved configuration.
    input_digest: String,
}

impl RunManifest {
    fn new(resolved: Resolved, seed: u64, input_digest: String, started: Instant) -> Self {
        Self {
            resolved,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_secs: started.elapsed().as_secs_f64(),
            input_digest,
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Failure classes mapped to exit codes.
enum Failure {
    Input(anyhow::Error),
    Numerical(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(Error::BootstrapFailure(_) | Error::Initialization(_) | Error::GradientUnavailable(_)) => {
                Failure::Numerical(e)
            }
            _ => Failure::Input(e),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match cli.threads.map(Ok).or_else(|| {
        std::env::var(THREADS_ENV)
            .ok()
            .map(|v| v.parse::<usize>().map_err(|_| anyhow!("{THREADS_ENV}={v} is not a thread count")))
    }) {
        None => None,
        Some(Ok(n)) if n > 0 => Some(n),
        Some(Ok(_)) => return report_failure(Failure::Input(anyhow!("thread count must be positive"))),
        Some(Err(e)) => return report_failure(Failure::Input(e)),
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => return report_failure(Failure::Input(e.into())),
    };
    let outcome = pool.install(|| match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Replay(args) => cmd_replay(args),
    });
    match outcome {
        Ok(code) => code,
        Err(f) => report_failure(f),
    }
}

fn report_failure(f: Failure) -> ExitCode {
    match f {
        Failure::Input(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Failure::Numerical(e) => {
            eprintln!("numerical failure: {e:#}");
            ExitCode::from(2)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct Estimate {
    estimate: f64,
    se: Option<f64>,
    p_value: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct CoefficientRow {
    name: String,
    zzc: Estimate,
    proposed: Option<Estimate>,
    /// Variance ratio of ZZC over the update.
    gain: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct ConvergenceFlags {
    main: bool,
    working_ipw: bool,
    working_full: bool,
}

#[derive(Debug, Clone, Serialize)]
struct FitReport {
    manifest: RunManifest,
    n: usize,
    n_sampled: usize,
    n_cases: usize,
    design: SamplingDesign,
    sieve: SieveConfig,
    working_model: ModelSpec,
    converged: ConvergenceFlags,
    bootstrap_requested: usize,
    bootstrap_used: usize,
    bootstrap_failed: usize,
    fallback: Option<bool>,
    coefficients: Vec<CoefficientRow>,
}

/// Two-sided normal p-value for `estimate / se`.
fn p_value(estimate: f64, se: f64) -> f64 {
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    2.0 * (1.0 - std_normal.cdf((estimate / se).abs()))
}

fn estimate(value: f64, se: Option<f64>) -> Estimate {
    Estimate { estimate: value, se, p_value: se.map(|s| p_value(value, s)) }
}

fn load_fit_data(args: &FitArgs) -> anyhow::Result<CohortDataset> {
    if args.estimate_design {
        // any design that accepts unsampled rows; replaced right after loading
        let provisional = SamplingDesign::new(0.5, 1.0)?;
        let data = load_dataset(&args.data, provisional)?;
        let design = data.estimated_design()?;
        return Ok(data.with_design(design)?);
    }
    let qs = args.qs.ok_or_else(|| anyhow!("--qs is required without --estimate-design"))?;
    let design = SamplingDesign::new(qs, args.qc)?;
    Ok(load_dataset(&args.data, design)?)
}

fn cmd_fit(args: FitArgs) -> Result<ExitCode, Failure> {
    let started = Instant::now();
    let bytes = std::fs::read(&args.data)
        .with_context(|| format!("reading {}", args.data.display()))
        .map_err(Failure::Input)?;
    let digest = sha256_hex(&bytes);
    let data = load_fit_data(&args).map_err(Failure::Input)?;
    let names = data.covariate_names().clone();
    let working_spec = match args.working {
        Some(Working::Z) => ModelSpec::WorkingZ,
        Some(Working::Aux) if names.xstar.is_empty() => {
            return Err(Failure::Input(anyhow!("--working aux needs xstar: columns in the data")))
        }
        Some(Working::Aux) => ModelSpec::WorkingAux,
        None => icsieve::estimator::working_spec(&data),
    };
    let boot = BootstrapConfig { replicates: args.bootstrap, seed: args.seed };
    boot.validate().map_err(|e| Failure::Input(e.into()))?;
    let sieve = SieveConfig::from_dataset(&data, args.degree).map_err(|e| Failure::Input(e.into()))?;
    let fit_cfg = FitConfig { seed: args.seed, max_iterations: args.max_iterations, ..FitConfig::default() };
    fit_cfg.validate().map_err(|e| Failure::Input(e.into()))?;
    let analysis = UpdateAnalysis::with_working_spec(&data, &sieve, &sieve, working_spec, &fit_cfg)
        .map_err(|e| Failure::from(anyhow::Error::from(e)))?;
    let converged = ConvergenceFlags {
        main: analysis.main_fit.converged,
        working_ipw: analysis.working_ipw_fit.converged,
        working_full: analysis.working_full_fit.converged,
    };
    let all_converged = converged.main && converged.working_ipw && converged.working_full;

    let (update, used, failed): (Option<UpdateResult>, usize, usize) = if all_converged {
        let run = analysis.run_bootstrap(&boot).map_err(|e| Failure::from(anyhow::Error::from(e)))?;
        let update = analysis.update_from(&run).map_err(|e| Failure::from(anyhow::Error::from(e)))?;
        (Some(update), run.replicates.len(), run.failed.len())
    } else {
        (None, 0, 0)
    };

    let coefficients = build_rows(&ModelSpec::Main.parameter_names(&names), &analysis.main_fit, update.as_ref());
    let report = FitReport {
        manifest: RunManifest::new(Resolved::Fit(args.clone()), args.seed, digest, started),
        n: data.len(),
        n_sampled: data.subjects().iter().filter(|s| s.sampled()).count(),
        n_cases: data.case_count(),
        design: *data.design(),
        sieve,
        working_model: working_spec,
        converged,
        bootstrap_requested: args.bootstrap,
        bootstrap_used: used,
        bootstrap_failed: failed,
        fallback: update.as_ref().map(|u| u.fallback),
        coefficients,
    };
    print_fit_summary(&report);
    let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Input(e.into()))?;
    match &args.out {
        Some(path) => write_file(path, json.as_bytes()).map_err(Failure::Input)?,
        None => println!("{json}"),
    }
    if all_converged {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("warning: a point fit did not converge; bootstrap skipped");
        Ok(ExitCode::from(2))
    }
}

fn build_rows(names: &[String], main: &FitResult, update: Option<&UpdateResult>) -> Vec<CoefficientRow> {
    names
        .iter()
        .enumerate()
        .map(|(k, name)| CoefficientRow {
            name: name.clone(),
            zzc: estimate(main.vartheta_hat[k], update.map(|u| u.se_original[k])),
            proposed: update.map(|u| estimate(u.vartheta_bar[k], Some(u.se_updated[k]))),
            gain: update.map(|u| u.gain[k]),
        })
        .collect()
}

fn print_fit_summary(report: &FitReport) {
    eprintln!(
        "n = {}, sampled = {}, cases = {}, bootstrap {}/{} used{}",
        report.n,
        report.n_sampled,
        report.n_cases,
        report.bootstrap_used,
        report.bootstrap_requested,
        if report.fallback == Some(true) { " (no update: working contrast has zero variance)" } else { "" }
    );
    eprintln!("{:<12} {:>10} {:>9} {:>9} {:>10} {:>9} {:>9}", "", "ZZC", "SE", "P", "Proposed", "SE", "P");
    let num = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    for row in &report.coefficients {
        let p = row.proposed.as_ref();
        eprintln!(
            "{:<12} {:>10.4} {:>9} {:>9} {:>10} {:>9} {:>9}",
            row.name,
            row.zzc.estimate,
            num(row.zzc.se),
            num(row.zzc.p_value),
            num(p.map(|e| e.estimate)),
            num(p.and_then(|e| e.se)),
            num(p.and_then(|e| e.p_value)),
        );
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode, Failure> {
    let mut cfg = StudyConfig::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))
        .map_err(Failure::Input)?;
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    if let Some(b) = args.bootstrap {
        cfg.bootstrap = b;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    run_simulation(cfg, &args.out_dir)
}

fn run_simulation(cfg: StudyConfig, out_dir: &Path) -> Result<ExitCode, Failure> {
    let started = Instant::now();
    cfg.validate().map_err(|e| Failure::Input(e.into()))?;
    let digest = sha256_hex(&serde_json::to_vec(&cfg).map_err(|e| Failure::Input(e.into()))?);
    let report = run_study(&cfg).map_err(|e| Failure::from(anyhow::Error::from(e)))?;
    let manifest = RunManifest::new(Resolved::Simulate(cfg.clone()), cfg.seed, digest, started);

    let csv = report.csv_string().map_err(|e| Failure::Input(e.into()))?;
    write_file(&out_dir.join("report.csv"), csv.as_bytes()).map_err(Failure::Input)?;
    let json = serde_json::json!({ "manifest": manifest, "report": report });
    let json = serde_json::to_string_pretty(&json).map_err(|e| Failure::Input(e.into()))?;
    write_file(&out_dir.join("report.json"), json.as_bytes()).map_err(Failure::Input)?;
    let manifest_json = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Input(e.into()))?;
    write_file(&out_dir.join("manifest.json"), manifest_json.as_bytes()).map_err(Failure::Input)?;

    for s in &report.scenarios {
        for level in &s.levels {
            eprintln!(
                "p_c = {}, q_c = {}, rho = {:.3}: {} replicates used, {} failed, {} bootstrap draws dropped",
                s.scenario.p_c,
                s.scenario.q_c,
                level.rho,
                level.replicates_used,
                level.replicates_failed,
                level.bootstrap_failures
            );
        }
    }
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<ExitCode, Failure> {
    let scenario = match &args.config {
        Some(path) => {
            let cfg = StudyConfig::load(path)
                .with_context(|| format!("loading {}", path.display()))
                .map_err(Failure::Input)?;
            cfg.scenario
                .get(args.scenario)
                .cloned()
                .ok_or_else(|| Failure::Input(anyhow!("scenario index {} out of range", args.scenario)))?
        }
        None => Scenario::default(),
    };
    run_calibration(args, scenario)
}

#[derive(Serialize)]
struct CalibrationReport {
    manifest: RunManifest,
    end_of_study: f64,
    calibration_rate: f64,
    verification_rate: f64,
    iterations: usize,
}

fn run_calibration(args: CalibrateArgs, scenario: Scenario) -> Result<ExitCode, Failure> {
    let started = Instant::now();
    scenario.validate().map_err(|e| Failure::Input(e.into()))?;
    let cal = calibrate_end_of_study(&scenario, args.target_rate, (args.lower, args.upper), args.seed)
        .map_err(|e| Failure::Input(e.into()))?;
    let check = verify_case_rate(&scenario, cal.end_of_study, VERIFICATION_SUBJECTS, args.seed);
    let digest = sha256_hex(&serde_json::to_vec(&scenario).map_err(|e| Failure::Input(e.into()))?);
    let report = CalibrationReport {
        manifest: RunManifest::new(Resolved::Calibrate { args: args.clone(), scenario }, args.seed, digest, started),
        end_of_study: cal.end_of_study,
        calibration_rate: cal.rate,
        verification_rate: check,
        iterations: cal.iterations,
    };
    eprintln!(
        "u = {:.6} (case rate {:.4} calibration, {:.4} verification)",
        cal.end_of_study, cal.rate, check
    );
    let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Input(e.into()))?;
    println!("{json}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_replay(args: ReplayArgs) -> Result<ExitCode, Failure> {
    let text = std::fs::read_to_string(&args.manifest)
        .with_context(|| format!("reading {}", args.manifest.display()))
        .map_err(Failure::Input)?;
    // reports embed the manifest under "manifest"
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Failure::Input(e.into()))?;
    let value = value.get("manifest").cloned().unwrap_or(value);
    let manifest: RunManifest = serde_json::from_value(value).map_err(|e| Failure::Input(e.into()))?;
    match manifest.resolved {
        Resolved::Simulate(cfg) => run_simulation(cfg, &args.out_dir),
        Resolved::Fit(mut fit) => {
            let bytes = std::fs::read(&fit.data)
                .with_context(|| format!("reading {}", fit.data.display()))
                .map_err(Failure::Input)?;
            if sha256_hex(&bytes) != manifest.input_digest {
                return Err(Failure::Input(anyhow!("{} changed since the manifest was written", fit.data.display())));
            }
            fit.out = Some(args.out_dir.join("fit.json"));
            cmd_fit(fit)
        }
        Resolved::Calibrate { args: cal, scenario } => run_calibration(cal, scenario),
    }
}
