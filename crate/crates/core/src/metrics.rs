//! Spike detection on loss series and robust cross-run aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{median, quantile_sorted};

/// Step `t` starts a spike when `loss_t > factor * median(loss_{t-window..t-1})`
/// and at least `min_separation` steps have passed since the last onset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpikeRule {
    pub window: usize,
    pub factor: f64,
    pub min_separation: usize,
}

impl Default for SpikeRule {
    fn default() -> Self {
        Self { window: 20, factor: 1.5, min_separation: 10 }
    }
}

impl SpikeRule {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(invalid("window", "must be at least 2"));
        }
        if !(self.factor > 1.0 && self.factor.is_finite()) {
            return Err(invalid("factor", format!("{} must be finite and > 1", self.factor)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeEvent {
    pub step: usize,
    /// Largest loss from the onset until the series falls back to the
    /// pre-spike median or `min_separation` steps pass.
    pub peak: f64,
}

pub fn detect_spikes(losses: &[f64], rule: &SpikeRule) -> Result<Vec<SpikeEvent>> {
    rule.validate()?;
    if losses.len() <= rule.window {
        return Err(invalid("losses", format!("length {} must exceed the window {}", losses.len(), rule.window)));
    }
    let mut events = Vec::new();
    let mut last_onset: Option<usize> = None;
    for t in rule.window..losses.len() {
        if last_onset.is_some_and(|s| t < s + rule.min_separation) {
            continue;
        }
        let base = median(&losses[t - rule.window..t])?;
        if losses[t] > rule.factor * base {
            let horizon = (t + rule.min_separation).min(losses.len());
            let mut peak = losses[t];
            for &l in &losses[t + 1..horizon] {
                if l <= base {
                    break;
                }
                peak = peak.max(l);
            }
            events.push(SpikeEvent { step: t, peak });
            last_onset = Some(t);
        }
    }
    Ok(events)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub spike_count: usize,
    /// Largest spike peak, if any spike was seen.
    pub spike_peak: Option<f64>,
    /// Mean loss over the last 5% of recorded steps (at least one).
    pub final_loss: f64,
    pub diverged: bool,
}

/// Partial series from diverged runs are summarized on what was recorded;
/// one too short for the spike window counts zero spikes.
pub fn summarize(losses: &[f64], rule: &SpikeRule, diverged: bool) -> Result<RunSummary> {
    if losses.is_empty() {
        return Err(Error::Empty("losses"));
    }
    let events = if diverged && losses.len() <= rule.window {
        rule.validate()?;
        Vec::new()
    } else {
        detect_spikes(losses, rule)?
    };
    let tail = losses.len().div_ceil(20).max(1);
    let final_loss = losses[losses.len() - tail..].iter().sum::<f64>() / tail as f64;
    Ok(RunSummary {
        spike_count: events.len(),
        spike_peak: events.iter().map(|e| e.peak).reduce(f64::max),
        final_loss,
        diverged,
    })
}

/// Median with interquartile range, all by linear interpolation between
/// order statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateSummary {
    pub median: f64,
    pub iqr_low: f64,
    pub iqr_high: f64,
    pub n: usize,
}

pub fn aggregate(values: &[f64]) -> Result<AggregateSummary> {
    if values.is_empty() {
        return Err(Error::Empty("values"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("aggregate input".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(AggregateSummary {
        median: quantile_sorted(&sorted, 0.5),
        iqr_low: quantile_sorted(&sorted, 0.25),
        iqr_high: quantile_sorted(&sorted, 0.75),
        n: sorted.len(),
    })
}
