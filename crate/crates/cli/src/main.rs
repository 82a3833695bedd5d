// `!(d >= 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde_json::json;

use dsm_core::experiment::{
    build_experiment, certify, sweep_csv, sweep_point, CertifyConfig, CertifyStatus,
    ExperimentConfig, SweepRow,
};
use dsm_core::field::Method;
use dsm_core::integrate::StepperKind;
use dsm_core::stopping::StopKind;
use dsm_core::zoo::ZOO_NAMES;
use dsm_core::DsmError;

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_CERTIFICATE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "dsm",
    version,
    about = "Solve operator equations by integrating dynamical systems"
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug); RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one configured flow; writes trajectory.csv and run.json.
    Run { config: PathBuf },
    /// Repeat a run over noise levels; writes sweep.csv and sweep.json.
    SweepDelta {
        config: PathBuf,
        /// Comma-separated noise levels, e.g. 1e-2,1e-3,1e-4.
        #[arg(long, value_delimiter = ',', required = true)]
        deltas: Vec<f64>,
    },
    /// Check a bound certificate; writes certify.json.
    Certify { config: PathBuf },
    /// List problems, methods, stop rules and steppers.
    List,
}

/// A failure mapped onto the exit-code contract.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn config(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_CONFIG,
            error: error.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: 1, error }
    }
}

fn is_config_error(e: &DsmError) -> bool {
    matches!(
        e,
        DsmError::Usage(_)
            | DsmError::DimensionMismatch { .. }
            | DsmError::Inapplicable(_)
            | DsmError::NoRoot(_)
    )
}

fn classify(path: &Path, e: DsmError) -> Failure {
    let code = if is_config_error(&e) {
        EXIT_CONFIG
    } else {
        EXIT_SOLVER
    };
    Failure {
        code,
        error: anyhow::anyhow!("{}: {e}", path.display()),
    }
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))
        .map_err(Failure::config)?;
    serde_json::from_str(&text).map_err(|e| {
        Failure::config(anyhow::anyhow!(
            "{}:{}:{}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })
}

fn output_dir(configured: &str) -> anyhow::Result<PathBuf> {
    let dir = std::env::var_os("DSM_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(configured));
    fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir)
}

fn write(dir: &Path, name: &str, contents: &str) -> anyhow::Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> anyhow::Result<()> {
    write(dir, name, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn cmd_run(path: &Path) -> Result<(), Failure> {
    let cfg: ExperimentConfig = read_config(path)?;
    let exp = build_experiment(&cfg).map_err(|e| classify(path, e))?;
    let out = exp.run();
    let dir = output_dir(&cfg.output)?;
    write(&dir, "trajectory.csv", &out.log.to_csv())?;
    write_json(&dir, "run.json", &out.metadata)?;
    match out.error {
        Some(e) => Err(classify(path, e)),
        None => {
            let last = out.log.residual_norms.last().copied().unwrap_or(f64::NAN);
            println!(
                "{}: {} samples, t = {:e}, |F(u)| = {last:e}, output in {}",
                cfg.problem,
                out.log.len(),
                out.log.final_time().unwrap_or(0.0),
                dir.display()
            );
            Ok(())
        }
    }
}

fn cmd_sweep(path: &Path, deltas: &[f64]) -> Result<(), Failure> {
    let cfg: ExperimentConfig = read_config(path)?;
    if let Some(bad) = deltas.iter().find(|d| !(**d >= 0.0) || !d.is_finite()) {
        return Err(Failure::config(anyhow::anyhow!(
            "noise level {bad} must be finite and nonnegative"
        )));
    }
    let rows: Vec<Result<SweepRow, DsmError>> =
        deltas.par_iter().map(|&d| sweep_point(&cfg, d)).collect();
    let rows: Vec<SweepRow> = rows
        .into_iter()
        .collect::<Result<_, _>>()
        .map_err(|e| classify(path, e))?;
    let dir = output_dir(&cfg.output)?;
    write(&dir, "sweep.csv", &sweep_csv(&rows))?;
    write_json(
        &dir,
        "sweep.json",
        &json!({ "config": cfg, "deltas": deltas, "rows": rows }),
    )?;
    for r in &rows {
        println!(
            "delta {:e}  t_delta {:e}  err {:e}",
            r.delta, r.t_delta, r.err
        );
    }
    Ok(())
}

fn cmd_certify(path: &Path) -> Result<(), Failure> {
    let cfg: CertifyConfig = read_config(path)?;
    let outcome = certify(&cfg).map_err(|e| classify(path, e))?;
    let dir = output_dir(&cfg.output)?;
    write_json(
        &dir,
        "certify.json",
        &json!({
            "config": cfg,
            "status": outcome.status,
            "conditions_ok": outcome.conditions_ok,
            "max_slack": outcome.max_slack,
            "first_violation_t": outcome.first_violation_t,
            "detail": outcome.detail,
        }),
    )?;
    println!(
        "certificate {:?}, conditions_ok = {}",
        outcome.status, outcome.conditions_ok
    );
    match outcome.status {
        CertifyStatus::Violated => Err(Failure {
            code: EXIT_CERTIFICATE,
            error: anyhow::anyhow!("bound violated at t = {:?}", outcome.first_violation_t),
        }),
        CertifyStatus::Holds | CertifyStatus::Inapplicable => Ok(()),
    }
}

fn cmd_list() {
    println!("problems:");
    for name in ZOO_NAMES {
        println!("  {name}");
    }
    println!("methods:");
    for m in Method::ALL {
        println!("  {}", m.tag());
    }
    println!("stop rules:");
    for k in StopKind::ALL {
        println!("  {}", k.tag());
    }
    println!("steppers:");
    for k in StepperKind::ALL {
        println!("  {}", k.tag());
    }
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
        Command::Run { config } => cmd_run(config),
        Command::SweepDelta { config, deltas } => cmd_sweep(config, deltas),
        Command::Certify { config } => cmd_certify(config),
        Command::List => {
            cmd_list();
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
