//! `slungload`: train certificates, verify them, run closed-loop scenarios
//! and export reference trajectories.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 simulation
//! abort, 4 training divergence, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use slungload_core::neural_ccm::{self, EpochStats};
use slungload_core::simulator::{self, certificate_hash, Metrics};
use slungload_core::trajectory::{export_reference_csv, Reference};
use slungload_core::{CertificatePair, Error, ScenarioConfig, TrainConfig, VerificationReport};

#[derive(Parser)]
#[command(name = "slungload", version, about = "Neural contraction control of a three-quadrotor slung payload")]
struct Cli {
    /// Increase log verbosity (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a certificate and write its weights and a verification report.
    Train(TrainArgs),
    /// Run a closed-loop scenario and write the CSV log and metrics JSON.
    Simulate(SimulateArgs),
    /// Check the certificate conditions on fresh samples.
    Verify(VerifyArgs),
    /// Write the figure-8 reference (state, acceleration, feedforward) as CSV.
    ExportReference(ExportArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Training config (JSON). Omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario config (JSON). Omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Disable the disturbance compensation.
    #[arg(long)]
    no_ude: bool,
    /// Overrides the run length (s).
    #[arg(long)]
    duration: Option<f64>,
    /// Overrides the integration step (s).
    #[arg(long)]
    dt: Option<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Number of samples.
    #[arg(short, long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for `verify_<seed>.json`; the report is printed either way.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Scenario config (JSON) supplying the system, formation and figure-8.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
}

/// Failures with a dedicated exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Abort(String),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Abort(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Failure::Usage(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(f) = err.downcast_ref::<Failure>() {
        return match f {
            Failure::Usage(_) => 2,
            Failure::Abort(_) => 3,
        };
    }
    match err.downcast_ref::<Error>() {
        Some(Error::InvalidConfig(_) | Error::FormationInfeasible(_)) => 2,
        Some(Error::TrainingDiverged { .. }) => 4,
        _ => 1,
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text =
        std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

fn load_weights(path: &Path) -> anyhow::Result<CertificatePair> {
    CertificatePair::load(path).map_err(|e| usage(format!("cannot load weights {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct TrainReport<'a> {
    seed: u64,
    weights_sha256: String,
    config: &'a TrainConfig,
    history: &'a [EpochStats],
    validation: &'a VerificationReport,
}

fn print_rates(v: &VerificationReport) {
    println!(
        "verification on {} samples: contraction violations {:.2}%, bound violations {:.2}%, joint pass {:.2}%",
        v.n_samples,
        100.0 * v.violation_rate_eq11,
        100.0 * v.violation_rate_eq12,
        100.0 * v.joint_pass_rate
    );
}

fn cmd_train(args: &TrainArgs) -> anyhow::Result<()> {
    let cfg: TrainConfig = load_config(args.config.as_deref())?;
    cfg.validate()?;
    std::fs::create_dir_all(&args.out)?;
    let outcome = neural_ccm::train(&cfg, args.seed)?;
    let weights = args.out.join(format!("weights_{}.json", args.seed));
    outcome.cert.save(&weights)?;
    let report = TrainReport {
        seed: args.seed,
        weights_sha256: certificate_hash(&outcome.cert)?,
        config: &cfg,
        history: &outcome.history,
        validation: &outcome.validation,
    };
    let report_path = args.out.join(format!("train_report_{}.json", args.seed));
    write_json(&report_path, &report)?;

    let h = &outcome.history;
    let step = (h.len() / 5).max(1);
    println!("loss curve ({} epochs):", h.len());
    for s in h.iter().step_by(step).chain(h.last().filter(|_| (h.len() - 1) % step != 0)) {
        println!("  epoch {:>3}  loss {:.4e}", s.epoch, s.loss.total);
    }
    print_rates(&outcome.validation);
    println!("weights: {}", weights.display());
    println!("report: {}", report_path.display());
    Ok(())
}

fn print_metrics(m: &Metrics) {
    println!(
        "payload RMSE {:.4e} m, steady-state error {:.4e} m, steady dT error {:.4e} N, max |sat feedback| {:.4}, V_e increases {}/{}",
        m.rmse_norm,
        m.steady_state_error,
        m.steady_state_delta_t_error,
        m.max_saturated_feedback,
        m.v_e_violations,
        m.v_e_checked_steps
    );
}

fn cmd_simulate(args: &SimulateArgs) -> anyhow::Result<()> {
    let mut cfg: ScenarioConfig = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.no_ude {
        cfg.ude_enabled = false;
    }
    if let Some(d) = args.duration {
        cfg = cfg.with_duration(d);
    }
    if let Some(dt) = args.dt {
        cfg.dt = dt;
    }
    cfg.validate()?;
    let cert = load_weights(&args.weights)?;
    let log = simulator::run(&cfg, &cert)?;
    let metrics = simulator::metrics(&log).ok();
    let (csv, json) = log.write_files(&args.out, metrics.clone())?;
    println!("log: {}", csv.display());
    println!("metrics: {}", json.display());
    if let Some(m) = &metrics {
        print_metrics(m);
    }
    if let Some(a) = &log.abort {
        return Err(Failure::Abort(format!(
            "simulation aborted at step {} (t = {:.3} s, {}): {}",
            a.step, a.t, a.kind, a.message
        ))
        .into());
    }
    Ok(())
}

fn cmd_verify(args: &VerifyArgs) -> anyhow::Result<()> {
    if args.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let cert = load_weights(&args.weights)?;
    let params = cert.train_config.as_ref().map(|c| c.system.clone()).unwrap_or_default();
    let report = neural_ccm::verify(&params, &cert, args.n, args.seed)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    print_rates(&report);
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join(format!("verify_{}.json", args.seed)), &report)?;
    }
    Ok(())
}

fn cmd_export(args: &ExportArgs) -> anyhow::Result<()> {
    let cfg: ScenarioConfig = load_config(args.config.as_deref())?;
    let duration = args.duration.unwrap_or(cfg.duration);
    let dt = args.dt.unwrap_or(cfg.dt);
    if !(dt > 0.0 && duration >= 0.0) {
        return Err(usage("--dt must be positive and --duration non-negative"));
    }
    cfg.system.validate()?;
    let reference = Reference::new(&cfg.system, &cfg.formation, &cfg.figure8)?;
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join(format!("reference_{}.csv", cfg.name));
    let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let rows = export_reference_csv(&reference, duration, dt, file)?;
    println!("{rows} rows: {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Verify(a) => cmd_verify(a),
        Command::ExportReference(a) => cmd_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {e:#}");
            if code == 2 {
                eprintln!("run `slungload --help` for usage");
            }
            ExitCode::from(code)
        }
    }
}
