//! Command-line front end: `run`, `sweep`, `report` and `defaults`.
//!
//! Exit codes: 0 success, 1 validation error, 2 divergence observed (outputs
//! are still written), 3 I/O error.

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub use commands::{
    cmd_report, cmd_run, cmd_sweep, format_report, run_experiment, sweep, RunOutcome, SweepOutcome, SweepRun,
};
pub use config::{
    BurstSection, ExperimentConfig, OptimizerSection, OutputSection, ProblemSection, Variant, STUDY_BETA_E,
    STUDY_SPIKE_FACTOR,
};
pub use output::{
    read_trace_csv, resolve_output_dir, trace_csv, AggregateFile, FailedRun, RunRecord, VariantAggregate,
    OUTPUT_ROOT_ENV,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Invalid(#[from] crate::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("divergence observed: {0}")]
    Diverged(String),
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) | CliError::Parse { .. } => 1,
            CliError::Diverged(_) => 2,
            CliError::Io { .. } => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "trasmuon", version, about = "Burst stress experiments for Muon-family optimizers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment; writes trace.csv and summary.json.
    Run {
        config: PathBuf,
        /// Output directory, overriding `[output] directory`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every (variant, seed) pair and aggregate per variant.
    Sweep {
        config: PathBuf,
        /// Comma-separated seed list, e.g. `0,1,2` or a range `0..8`.
        #[arg(long, value_parser = parse_seeds)]
        seeds: SeedList,
        /// Comma-separated variant names.
        #[arg(long, value_delimiter = ',', required = true)]
        variants: Vec<String>,
        /// Worker threads; results do not depend on it.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print an aggregate.json as a table.
    Report { aggregate: PathBuf },
    /// Print the complete default configuration.
    Defaults,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedList(pub Vec<u64>);

fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.parse().map_err(|_| format!("bad seed range `{part}`"))?;
            let b: u64 = b.parse().map_err(|_| format!("bad seed range `{part}`"))?;
            out.extend(a..b);
        } else {
            out.push(part.parse().map_err(|_| format!("bad seed `{part}`"))?);
        }
    }
    if out.is_empty() {
        return Err("at least one seed is required".into());
    }
    Ok(SeedList(out))
}

pub fn main_with(cli: Cli) -> ExitCode {
    let result = match cli.command {
        Command::Run { config, out } => cmd_run(&config, out.as_deref()).map(|o| o.message),
        Command::Sweep { config, seeds, variants, jobs, out } => {
            cmd_sweep(&config, &seeds.0, &variants, jobs, out.as_deref()).map(|o| o.message)
        }
        Command::Report { aggregate } => cmd_report(&aggregate),
        Command::Defaults => Ok(ExperimentConfig::default().to_toml()),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
