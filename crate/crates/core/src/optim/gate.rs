//! Relative-energy column gate.

use serde::{Deserialize, Serialize};

use crate::linalg::quantile_sorted;
use crate::optim::TrasMuonHyper;

/// Summary of the per-column ratios `r_j = E_j / (E_ref + eps)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioStats {
    pub max: f64,
    pub q95: f64,
    pub median: f64,
}

impl RatioStats {
    pub fn zero() -> Self {
        Self { max: 0.0, q95: 0.0, median: 0.0 }
    }
}

/// Unclamped soft clip `1 / (1 + alpha log(1 + r))`.
#[inline]
pub fn soft_clip_raw(r: f64, alpha: f64) -> f64 {
    1.0 / (1.0 + alpha * r.ln_1p())
}

pub fn ratios(energies: &[f64], e_ref: f64, eps: f64) -> Vec<f64> {
    let denom = e_ref + eps;
    energies.iter().map(|e| e / denom).collect()
}

pub fn ratio_stats(energies: &[f64], e_ref: f64, eps: f64) -> RatioStats {
    let mut r = ratios(energies, e_ref, eps);
    if r.is_empty() {
        return RatioStats::zero();
    }
    r.sort_by(f64::total_cmp);
    RatioStats { max: *r.last().unwrap(), q95: quantile_sorted(&r, 0.95), median: quantile_sorted(&r, 0.5) }
}

/// Instantaneous clip for one gate refresh.
#[derive(Debug, Clone, PartialEq)]
pub struct GateComputation {
    pub c_inst: Vec<f64>,
    pub r_stats: RatioStats,
    pub triggered_count: usize,
}

/// Soft clip of each column ratio, clamped to `[c_min, 1]`. With the trigger
/// enabled, columns at or below `k` get exactly 1.
pub fn compute_gate(energies: &[f64], e_ref: f64, hyper: &TrasMuonHyper) -> GateComputation {
    let r = ratios(energies, e_ref, hyper.eps);
    let mut triggered_count = 0;
    let c_inst: Vec<f64> = r
        .iter()
        .map(|&rj| {
            let above = rj > hyper.k;
            if above {
                triggered_count += 1;
            }
            if hyper.trigger_enabled && !above {
                1.0
            } else {
                soft_clip_raw(rj, hyper.alpha).clamp(hyper.c_min, 1.0)
            }
        })
        .collect();
    GateComputation { c_inst, r_stats: ratio_stats(energies, e_ref, hyper.eps), triggered_count }
}
