//! Command-line front end: config loading, run/study/check subcommands and
//! all file output.
//!
//! Exit codes: 0 success, 2 config error, 3 step failure, 4 verification
//! failure, 5 I/O error.

pub mod scenarios;

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;
use thiserror::Error;

use crate::diagnostics::study::{eps_study, tau_study, StudyError, StudyReport};
use crate::diagnostics::verify::verify_trajectory;
use crate::diagnostics::{energy_monitor, obstacle_violation, write_ledger_csv};
use crate::grid::write_snapshot;
use crate::scheme::checkpoint::{self, CheckpointError};
use crate::scheme::{ConfigError, SchemeConfig, SchemeError, Trajectory};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Step(String),
    #[error("{0}")]
    Verify(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Step(_) => 3,
            CliError::Verify(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

fn io_err(what: impl std::fmt::Display, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{what}: {e}"))
}

#[derive(Debug, Parser)]
#[command(name = "phasefield", version, about = "Backward-Euler solver for a singular entropy-balance phase-field system")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one configuration and write ledger, snapshots and checkpoint.
    Run(RunArgs),
    /// Self-convergence study over a τ ladder.
    StudyTau(StudyArgs),
    /// Self-convergence study over an ε ladder.
    StudyEps(StudyArgs),
    /// Reload a checkpoint and verify every stored step from scratch.
    Check {
        checkpoint: PathBuf,
    },
    /// Print a built-in scenario config (lists them without a name).
    Scenario {
        name: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct Input {
    /// Config file.
    #[arg(long, required_unless_present = "scenario", conflicts_with = "scenario")]
    pub config: Option<PathBuf>,
    /// Built-in scenario name instead of a config file.
    #[arg(long)]
    pub scenario: Option<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub input: Input,
    #[arg(long)]
    pub out: PathBuf,
    /// Snapshot cadence in steps [default: max(1, N/50)].
    #[arg(long)]
    pub snapshot_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[command(flatten)]
    pub input: Input,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated ladder, coarsest first.
    #[arg(long, value_delimiter = ',', required = true)]
    pub ladder: Vec<f64>,
    /// Parallel runs [default: hardware parallelism].
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// Written to `manifest.toml` before a command starts and again when it ends.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// `running`, `complete` or `failed`.
    pub status: String,
    pub out_dir: String,
    /// Paths relative to `out_dir`.
    pub artifacts: Vec<String>,
    pub warnings: Vec<String>,
    pub message: Option<String>,
    pub config: SchemeConfig,
}

/// Reads and validates a config file.
pub fn parse_config(path: &Path) -> Result<SchemeConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path.display(), e))?;
    let config = SchemeConfig::from_toml(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    config
        .resolve()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(config)
}

fn load_input(input: &Input) -> Result<SchemeConfig, CliError> {
    match (&input.config, &input.scenario) {
        (Some(p), _) => parse_config(p),
        (None, Some(name)) => {
            let c = scenarios::scenario(name).map_err(|e| CliError::Config(e.to_string()))?;
            c.resolve().map_err(|e| CliError::Config(format!("{name}: {e}")))?;
            Ok(c)
        }
        (None, None) => Err(CliError::Config("either --config or --scenario is required".into())),
    }
}

/// Writes through a temporary file so a reader never sees a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    let res = fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(bytes).and_then(|_| f.sync_all()))
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(io_err(path.display(), e));
    }
    Ok(())
}

fn write_manifest(out: &Path, m: &RunManifest) -> Result<(), CliError> {
    let text = toml::to_string(m).map_err(|e| io_err("manifest", e))?;
    write_atomic(&out.join("manifest.toml"), text.as_bytes())
}

fn prepare_out(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| io_err(out.display(), e))
}

fn step_failure(e: &SchemeError) -> CliError {
    match e {
        SchemeError::Config(c) => CliError::Config(c.to_string()),
        other => CliError::Step(other.to_string()),
    }
}

fn snapshot_steps(n: usize, every: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..=n).step_by(every).collect();
    if v.last() != Some(&n) {
        v.push(n);
    }
    v
}

fn write_run_artifacts(
    traj: &Trajectory,
    out: &Path,
    every: usize,
    artifacts: &mut Vec<String>,
) -> Result<(), CliError> {
    let mut add = |name: String, bytes: Vec<u8>| -> Result<(), CliError> {
        write_atomic(&out.join(&name), &bytes)?;
        artifacts.push(name);
        Ok(())
    };
    add("config.toml".into(), traj.config.to_toml().into_bytes())?;

    let mut ledger = Vec::new();
    write_ledger_csv(&traj.ledger, &mut ledger).map_err(|e| io_err("ledger.csv", e))?;
    add("ledger.csv".into(), ledger)?;

    fs::create_dir_all(out.join("snapshots")).map_err(|e| io_err("snapshots", e))?;
    for i in snapshot_steps(traj.len(), every) {
        let (theta, chi, _) = traj.state(i).expect("stored step");
        for (q, f) in [("theta", theta), ("chi", chi)] {
            let mut bytes = Vec::new();
            write_snapshot(f, &mut bytes).map_err(|e| io_err("snapshot", e))?;
            add(format!("snapshots/{q}_{i:05}.bin"), bytes)?;
        }
    }

    add("checkpoint.bin".into(), checkpoint::to_bytes(traj))?;
    add("report.txt".into(), run_report(traj).into_bytes())?;
    Ok(())
}

/// Plain-text summary of a (possibly partial) trajectory.
pub fn run_report(traj: &Trajectory) -> String {
    let mut s = String::new();
    let n = traj.config.scheme.steps;
    let _ = writeln!(s, "steps completed: {} of {n}", traj.len());
    let _ = writeln!(s, "tau: {}", traj.tau());
    let fold = |f: fn(&crate::diagnostics::LedgerRow) -> f64, init: f64, g: fn(f64, f64) -> f64| {
        traj.ledger.iter().map(f).fold(init, g)
    };
    let _ = writeln!(s, "min theta: {:e}", fold(|r| r.theta_min, f64::INFINITY, f64::min));
    let _ = writeln!(s, "max entropy defect: {:e}", fold(|r| r.entropy_defect, 0.0, f64::max));
    let _ = writeln!(s, "max outer contraction: {:e}", fold(|r| r.max_contraction, 0.0, f64::max));
    if let Ok(v) = obstacle_violation(traj) {
        let _ = writeln!(s, "obstacle violation: {v:e}");
    }
    let energy = energy_monitor(traj);
    let _ = writeln!(s, "energy quantities (running sup):");
    for (name, v) in energy.summary().named() {
        let _ = writeln!(s, "  {name}: {v:e}");
    }
    let _ = writeln!(s, "gronwall constant: {:e}", energy.gronwall_constant);
    for w in &traj.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

pub fn cmd_run(args: &RunArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let config = load_input(&args.input)?;
    let problem = config.resolve().map_err(|e| CliError::Config(e.to_string()))?;
    let n = config.scheme.steps;
    let every = args.snapshot_every.unwrap_or((n / 50).max(1));
    if every == 0 {
        return Err(CliError::Config("--snapshot-every must be at least 1".into()));
    }
    let out = &args.out;
    prepare_out(out)?;
    let mut manifest = RunManifest {
        command: "run".into(),
        status: "running".into(),
        out_dir: out.display().to_string(),
        artifacts: Vec::new(),
        warnings: problem.warnings.clone(),
        message: None,
        config: config.clone(),
    };
    write_manifest(out, &manifest)?;
    for w in &problem.warnings {
        warn!("{w}");
    }

    info!("running {n} steps, tau = {}", problem.tau);
    let start = Trajectory::start(config).map_err(|e| step_failure(&e))?;
    let (traj, failure) = match start.advance(n) {
        Ok(t) => (t, None),
        Err(SchemeError::Step { partial, step, steps, source }) => {
            let msg = format!("step {step} of {steps} failed: {source}");
            (*partial, Some(CliError::Step(msg)))
        }
        Err(e) => return Err(step_failure(&e)),
    };

    write_run_artifacts(&traj, out, every, &mut manifest.artifacts)?;
    manifest.warnings = traj.warnings.clone();
    match &failure {
        None => manifest.status = "complete".into(),
        Some(e) => {
            manifest.status = "failed".into();
            manifest.message = Some(e.to_string());
        }
    }
    write_manifest(out, &manifest)?;
    let _ = stdout.write_all(run_report(&traj).as_bytes());
    match failure {
        None => Ok(()),
        Some(e) => Err(e),
    }
}

fn study_failure(e: StudyError) -> CliError {
    match e {
        StudyError::TooShort(_) | StudyError::NonNested(_) => CliError::Config(e.to_string()),
        StudyError::Member { ref source, .. } if matches!(**source, SchemeError::Config(_)) => {
            CliError::Config(e.to_string())
        }
        StudyError::Pool(_) => CliError::Io(e.to_string()),
        _ => CliError::Step(e.to_string()),
    }
}

pub fn cmd_study(kind: &str, args: &StudyArgs, stdout: &mut dyn Write) -> Result<StudyReport, CliError> {
    let config = load_input(&args.input)?;
    let jobs = match args.jobs {
        Some(0) => return Err(CliError::Config("--jobs must be at least 1".into())),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let out = &args.out;
    prepare_out(out)?;
    let mut manifest = RunManifest {
        command: kind.into(),
        status: "running".into(),
        out_dir: out.display().to_string(),
        artifacts: Vec::new(),
        warnings: Vec::new(),
        message: None,
        config: config.clone(),
    };
    write_manifest(out, &manifest)?;
    info!("{kind} over {:?} with {jobs} jobs", args.ladder);
    let result = match kind {
        "study-tau" => tau_study(&config, &args.ladder, jobs),
        _ => eps_study(&config, &args.ladder, jobs),
    };
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            let err = study_failure(e);
            manifest.status = "failed".into();
            manifest.message = Some(err.to_string());
            write_manifest(out, &manifest)?;
            return Err(err);
        }
    };
    let mut csv = Vec::new();
    report.write_csv(&mut csv).map_err(|e| io_err("study.csv", e))?;
    write_atomic(&out.join("study.csv"), &csv)?;
    let summary = report.summary();
    write_atomic(&out.join("study.txt"), summary.as_bytes())?;
    write_atomic(&out.join("config.toml"), config.to_toml().as_bytes())?;
    manifest.artifacts = vec!["config.toml".into(), "study.csv".into(), "study.txt".into()];
    manifest.status = "complete".into();
    write_manifest(out, &manifest)?;
    let _ = stdout.write_all(summary.as_bytes());
    Ok(report)
}

pub fn cmd_check(path: &Path, stdout: &mut dyn Write) -> Result<(), CliError> {
    let traj = match checkpoint::load(path) {
        Ok(t) => t,
        Err(CheckpointError::Io(e)) => return Err(io_err(path.display(), e)),
        Err(e) => {
            let at = e.step().map_or_else(String::new, |s| format!(" at step {s}"));
            return Err(CliError::Verify(format!("{}: damaged checkpoint{at}: {e}", path.display())));
        }
    };
    let outcome = verify_trajectory(&traj);
    let _ = writeln!(
        stdout,
        "{} steps checked; max residuals: theta {:e}, chi {:e}; max entropy defect {:e}",
        outcome.steps, outcome.max_residual_theta, outcome.max_residual_chi, outcome.max_defect
    );
    if outcome.passed() {
        let _ = writeln!(stdout, "check passed");
        Ok(())
    } else {
        Err(CliError::Verify(format!("check failed: {}", outcome.failures.join("; "))))
    }
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Run(a) => cmd_run(a, stdout),
        Command::StudyTau(a) => cmd_study("study-tau", a, stdout).map(|_| ()),
        Command::StudyEps(a) => cmd_study("study-eps", a, stdout).map(|_| ()),
        Command::Check { checkpoint } => cmd_check(checkpoint, stdout),
        Command::Scenario { name: None } => {
            for n in scenarios::names() {
                let _ = writeln!(stdout, "{n}");
            }
            Ok(())
        }
        Command::Scenario { name: Some(n) } => {
            let text = scenarios::text(n).ok_or_else(|| {
                CliError::Config(ConfigError::Invalid(format!("unknown scenario '{n}'")).to_string())
            })?;
            let _ = stdout.write_all(text.as_bytes());
            Ok(())
        }
    }
}
