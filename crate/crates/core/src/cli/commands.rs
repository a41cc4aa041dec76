use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::cli::config::{ExperimentConfig, Variant};
use crate::cli::output::{
    resolve_output_dir, to_json, trace_csv, write_file, AggregateFile, FailedRun, RunRecord, VariantAggregate,
};
use crate::cli::CliError;
use crate::error::{invalid, Result};
use crate::metrics::{aggregate, summarize, AggregateSummary, RunSummary};
use crate::stress::{run_stress, StressRun};

/// Runs `cfg` with the given variant, without touching the filesystem.
pub fn run_experiment(cfg: &ExperimentConfig, variant: Variant) -> Result<(StressRun, RunSummary)> {
    cfg.validate()?;
    let problem = cfg.build_problem()?;
    let spec = cfg.optimizer_spec(variant)?;
    let burst = cfg.burst.to_config();
    let run = run_stress(&problem, &spec, burst.as_ref(), &cfg.run)?;
    let summary = summarize(&summary_losses(&run), &cfg.spike, run.diverged())?;
    Ok((run, summary))
}

/// Recorded losses, or the diverging loss alone if nothing was recorded.
fn summary_losses(run: &StressRun) -> Vec<f64> {
    match (run.trajectory.is_empty(), run.diverged_at) {
        (true, Some((_, loss))) => vec![loss],
        _ => run.losses(),
    }
}

fn record(cfg: &ExperimentConfig, variant: Variant, run: &StressRun, summary: RunSummary) -> RunRecord {
    RunRecord {
        version: crate::VERSION.to_string(),
        variant: variant.name().to_string(),
        summary,
        diverged_at_step: run.diverged_at.map(|(t, _)| t),
        steps_recorded: run.trajectory.len(),
        config: cfg.clone(),
    }
}

fn write_run(
    dir: &Path,
    cfg: &ExperimentConfig,
    record: &RunRecord,
    run: &StressRun,
) -> std::result::Result<(), CliError> {
    if cfg.output.trace {
        write_file(&dir.join("trace.csv"), &trace_csv(&run.trajectory))?;
    }
    write_file(&dir.join("summary.json"), to_json(record).as_bytes())
}

fn read_config(path: &Path) -> std::result::Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(ExperimentConfig::parse(&text)?)
}

pub struct RunOutcome {
    pub record: RunRecord,
    pub message: String,
}

/// `run <config>`. Outputs are written even when the run diverges; the
/// divergence is then reported as an error.
pub fn cmd_run(config_path: &Path, out: Option<&Path>) -> std::result::Result<RunOutcome, CliError> {
    let cfg = read_config(config_path)?;
    let variant = cfg.optimizer.name;
    let (run, summary) = run_experiment(&cfg, variant)?;
    let dir = resolve_output_dir(out.unwrap_or(&cfg.output.directory));
    let record = record(&cfg, variant, &run, summary);
    write_run(&dir, &cfg, &record, &run)?;
    if let Some((t, loss)) = run.diverged_at {
        return Err(CliError::Diverged(format!(
            "{variant} stopped at step {t} with loss {loss:e}; outputs in {}",
            dir.display()
        )));
    }
    let s = &record.summary;
    let message = format!(
        "{variant}: {} steps, {} spikes, final loss {:e}; outputs in {}\n",
        record.steps_recorded,
        s.spike_count,
        s.final_loss,
        dir.display()
    );
    Ok(RunOutcome { record, message })
}

/// One cell of a sweep.
pub struct SweepRun {
    pub variant: Variant,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub result: Result<(StressRun, RunSummary)>,
}

pub struct SweepOutcome {
    pub runs: Vec<SweepRun>,
    pub aggregate: AggregateFile,
    pub message: String,
}

/// Runs the variant-by-seed cross product on `jobs` threads. Results are
/// collected in (variant, seed) order, so they do not depend on `jobs`.
pub fn sweep(
    base: &ExperimentConfig,
    seeds: &[u64],
    variants: &[Variant],
    jobs: usize,
) -> Result<(Vec<SweepRun>, AggregateFile)> {
    if seeds.is_empty() {
        return Err(invalid("seeds", "at least one seed is required"));
    }
    if variants.is_empty() {
        return Err(invalid("variants", "at least one variant is required"));
    }
    base.validate()?;
    for &v in variants {
        base.optimizer_spec(v)?;
    }
    let cells: Vec<(Variant, u64)> = variants.iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    let run_cell = |&(variant, seed): &(Variant, u64)| {
        let mut config = base.with_sweep_seed(seed);
        config.optimizer.name = variant;
        let result = run_experiment(&config, variant);
        SweepRun { variant, seed, config, result }
    };
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(|e| invalid("jobs", e.to_string()))?;
    let runs: Vec<SweepRun> = pool.install(|| cells.par_iter().map(run_cell).collect());

    let variants_out = variants
        .iter()
        .map(|&v| {
            let mine: Vec<&SweepRun> = runs.iter().filter(|r| r.variant == v).collect();
            let ok: Vec<&RunSummary> = mine.iter().filter_map(|r| r.result.as_ref().ok().map(|(_, s)| s)).collect();
            let spikes: Vec<f64> = ok.iter().map(|s| s.spike_count as f64).collect();
            let finals: Vec<f64> = ok.iter().filter(|s| !s.diverged).map(|s| s.final_loss).collect();
            let agg = |xs: &[f64]| -> Option<AggregateSummary> { aggregate(xs).ok() };
            VariantAggregate {
                name: v.name().to_string(),
                spike_count: agg(&spikes),
                final_loss: agg(&finals),
                runs: ok.len(),
                diverged: ok.iter().filter(|s| s.diverged).count(),
                failed: mine
                    .iter()
                    .filter_map(|r| r.result.as_ref().err().map(|e| FailedRun { seed: r.seed, error: e.to_string() }))
                    .collect(),
            }
        })
        .collect();
    let aggregate =
        AggregateFile { version: crate::VERSION.to_string(), seeds: seeds.to_vec(), variants: variants_out };
    Ok((runs, aggregate))
}

/// `sweep <config> --seeds .. --variants ..`. Writes
/// `<out>/<variant>/seed-<s>/{trace.csv,summary.json}` and
/// `<out>/aggregate.json`.
pub fn cmd_sweep(
    config_path: &Path,
    seeds: &[u64],
    variant_names: &[String],
    jobs: usize,
    out: Option<&Path>,
) -> std::result::Result<SweepOutcome, CliError> {
    let cfg = read_config(config_path)?;
    let variants = variant_names.iter().map(|n| n.parse()).collect::<Result<Vec<Variant>>>()?;
    let (runs, aggregate) = sweep(&cfg, seeds, &variants, jobs)?;
    let root = resolve_output_dir(out.unwrap_or(&cfg.output.directory));
    for r in &runs {
        if let Ok((run, summary)) = &r.result {
            let dir = root.join(r.variant.name()).join(format!("seed-{}", r.seed));
            write_run(&dir, &r.config, &record(&r.config, r.variant, run, summary.clone()), run)?;
        }
    }
    write_file(&root.join("aggregate.json"), to_json(&aggregate).as_bytes())?;

    let dead: Vec<&str> = aggregate.variants.iter().filter(|v| v.runs == 0).map(|v| v.name.as_str()).collect();
    if !dead.is_empty() {
        return Err(CliError::Invalid(invalid("variants", format!("every run failed for {}", dead.join(", ")))));
    }
    let diverged: usize = aggregate.variants.iter().map(|v| v.diverged).sum();
    let report = format_report(&aggregate)?;
    if diverged > 0 {
        return Err(CliError::Diverged(format!("{diverged} run(s) diverged; outputs in {}\n{report}", root.display())));
    }
    let message = format!("{report}outputs in {}\n", root.display());
    Ok(SweepOutcome { runs, aggregate, message })
}

fn format_cell(a: Option<&AggregateSummary>, scientific: bool) -> String {
    match a {
        None => "n/a".to_string(),
        Some(a) if scientific => format!("{:.3e} ({:.3e},{:.3e})", a.median, a.iqr_low, a.iqr_high),
        Some(a) => format!("{} ({},{})", a.median, a.iqr_low, a.iqr_high),
    }
}

/// One row per variant: median with `(q25,q75)` for spike count and final
/// loss.
pub fn format_report(agg: &AggregateFile) -> Result<String> {
    if agg.variants.is_empty() {
        return Err(invalid("variants", "aggregate lists no variants"));
    }
    let rows: Vec<[String; 3]> = agg
        .variants
        .iter()
        .map(|v| [v.name.clone(), format_cell(v.spike_count.as_ref(), false), format_cell(v.final_loss.as_ref(), true)])
        .collect();
    let header = ["Method".to_string(), "Spike Count".to_string(), "Final Loss".to_string()];
    let width = |i: usize| rows.iter().chain([&header]).map(|r| r[i].len()).max().unwrap_or(0);
    let (w0, w1) = (width(0), width(1));
    let mut out = String::new();
    for r in [&header].into_iter().chain(&rows) {
        let _ = writeln!(out, "{:<w0$}  {:<w1$}  {}", r[0], r[1], r[2]);
    }
    let n = agg.variants.iter().map(|v| v.runs).max().unwrap_or(0);
    let _ = writeln!(out, "median (q25,q75) over up to {n} runs per method; lower is better");
    Ok(out)
}

/// `report <aggregate.json>`.
pub fn cmd_report(path: &Path) -> std::result::Result<String, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let agg: AggregateFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    Ok(format_report(&agg)?)
}
