//! Command-line front end.
//!
//! Every subcommand reads one JSON [`ExperimentConfig`], writes its tables into
//! the configured output directory and finishes with `manifest.json`.
//! Exit codes: 0 success, 1 numerical fault, 2 invalid input or failed
//! assumption check.

pub mod config;
pub mod output;
pub mod studies;
pub mod tables;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::Serialize;

pub use config::ExperimentConfig;
use output::Output;

use crate::error::Error;

/// Worker-count override for the data-parallel loops.
pub const WORKERS_ENV: &str = "SFMV_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "slowfast", version, about = "Slow-fast McKean-Vlasov averaging and moderate-deviation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Invariant densities of the frozen fast process.
    Equilibrium { config: PathBuf },
    /// Cell-problem solutions.
    Cell { config: PathBuf },
    /// Averaged coefficients.
    Average { config: PathBuf },
    /// Particle-system paths.
    Simulate { config: PathBuf },
    /// Coupling and weak-averaging convergence study.
    Couple { config: PathBuf },
    /// Fluctuation pairings across N and seeds.
    Fluctuate { config: PathBuf },
    /// Variational and Dawson-Gärtner rates for the configured control.
    Rate { config: PathBuf },
    /// Sampled checks of the standing assumptions.
    Validate { config: PathBuf },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Equilibrium { .. } => "equilibrium",
            Command::Cell { .. } => "cell",
            Command::Average { .. } => "average",
            Command::Simulate { .. } => "simulate",
            Command::Couple { .. } => "couple",
            Command::Fluctuate { .. } => "fluctuate",
            Command::Rate { .. } => "rate",
            Command::Validate { .. } => "validate",
        }
    }

    fn config(&self) -> &PathBuf {
        match self {
            Command::Equilibrium { config }
            | Command::Cell { config }
            | Command::Average { config }
            | Command::Simulate { config }
            | Command::Couple { config }
            | Command::Fluctuate { config }
            | Command::Rate { config }
            | Command::Validate { config } => config,
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    subcommand: &'a str,
    version: &'a str,
    workers: usize,
    seeds: Vec<u64>,
    started_unix_s: u64,
    elapsed_s: f64,
    files: &'a [String],
    config: &'a ExperimentConfig,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERICAL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

pub fn exit_code(e: &Error) -> i32 {
    if e.is_assumption() || matches!(e, Error::Config(_) | Error::InvalidArgument(_)) {
        EXIT_INPUT
    } else {
        EXIT_NUMERICAL
    }
}

fn apply_worker_env() -> Result<(), Error> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`")))?;
        crate::exec::init_workers(n);
    }
    Ok(())
}

/// Runs one subcommand; `Ok(false)` means the assumption checks failed.
pub fn execute(cmd: &Command) -> Result<bool, Error> {
    apply_worker_env()?;
    let cfg = ExperimentConfig::from_path(cmd.config())?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let mut out = Output::new(&cfg.output_dir)?;
    let mut ok = true;
    match cmd {
        Command::Equilibrium { .. } => tables::run_equilibrium(&cfg, &mut out)?,
        Command::Cell { .. } => tables::run_cell(&cfg, &mut out)?,
        Command::Average { .. } => tables::run_average(&cfg, &mut out)?,
        Command::Simulate { .. } => tables::run_simulate(&cfg, &mut out)?,
        Command::Couple { .. } => {
            studies::run_couple(&cfg, &mut out)?;
        }
        Command::Fluctuate { .. } => {
            studies::run_fluctuate(&cfg, &mut out)?;
        }
        Command::Rate { .. } => {
            studies::run_rate(&cfg, &mut out)?;
        }
        Command::Validate { .. } => ok = tables::run_validate(&cfg, &mut out)?,
    }
    let files = out.written().to_vec();
    let manifest = Manifest {
        subcommand: cmd.name(),
        version: env!("CARGO_PKG_VERSION"),
        workers: crate::exec::workers(),
        seeds: cfg.sorted_seeds(),
        started_unix_s: started,
        elapsed_s: clock.elapsed().as_secs_f64(),
        files: &files,
        config: &cfg,
    };
    out.json("manifest.json", &manifest)?;
    Ok(ok)
}

/// Parses arguments, runs, reports errors on stderr and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(true) => EXIT_OK,
        Ok(false) => {
            eprintln!("error: assumption checks failed; see validate.json");
            EXIT_INPUT
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
