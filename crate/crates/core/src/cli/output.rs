use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cli::config::ExperimentConfig;
use crate::cli::CliError;
use crate::metrics::{AggregateSummary, RunSummary};
use crate::stress::StepDiagnostics;

pub const OUTPUT_ROOT_ENV: &str = "TRASMUON_OUTPUT_ROOT";

/// Resolves a configured output directory against `TRASMUON_OUTPUT_ROOT`.
pub fn resolve_output_dir(dir: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}

/// Columns: step, loss, r_max, r_q95, c_used_min, delta_norm, burst,
/// degenerate. Floats use the shortest decimal that parses back to the same
/// value.
pub fn trace_csv(rows: &[StepDiagnostics]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::with_capacity(rows.len() * 96));
    for row in rows {
        w.serialize(row).expect("in-memory csv write");
    }
    w.into_inner().expect("in-memory csv flush")
}

pub fn read_trace_csv(bytes: &[u8]) -> Result<Vec<StepDiagnostics>, csv::Error> {
    csv::Reader::from_reader(bytes).deserialize().collect()
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub version: String,
    pub variant: String,
    pub summary: RunSummary,
    /// Step at which the run stopped on divergence.
    pub diverged_at_step: Option<usize>,
    pub steps_recorded: usize,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailedRun {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantAggregate {
    pub name: String,
    /// Over runs that completed, diverged or not.
    pub spike_count: Option<AggregateSummary>,
    /// Over runs that did not diverge.
    pub final_loss: Option<AggregateSummary>,
    pub runs: usize,
    pub diverged: usize,
    pub failed: Vec<FailedRun>,
}

/// Contents of `aggregate.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateFile {
    pub version: String,
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantAggregate>,
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json serializes");
    s.push('\n');
    s
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}
