use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::Matrix;
use crate::optim::{MomentumIntercept, Optimizer, OptimizerSpec};
use crate::rng::{normal_matrix, rng_from_seed};
use crate::stress::burst::{inject_gradient_burst, inject_momentum_burst, BurstConfig, BurstMode};
use crate::stress::problem::{grad_from_residual, loss_from_residual, residual, QuadraticProblem};

/// One row of a stress trajectory. `loss` is evaluated at the iterate the
/// step starts from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub loss: f64,
    /// NaN for optimizers without a gate.
    pub r_max: f64,
    pub r_q95: f64,
    /// Exactly 1 for optimizers without a gate.
    pub c_used_min: f64,
    pub delta_norm: f64,
    pub burst: bool,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StressOptions {
    pub total_steps: usize,
    pub init_seed: u64,
    /// A run diverges once its loss is non-finite or exceeds
    /// `divergence_factor * max(1, initial loss)`.
    pub divergence_factor: f64,
}

impl Default for StressOptions {
    fn default() -> Self {
        Self { total_steps: 2000, init_seed: 0, divergence_factor: 1e12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StressRun {
    pub trajectory: Vec<StepDiagnostics>,
    pub final_w: Matrix,
    /// Step and loss that ended the run early.
    pub diverged_at: Option<(usize, f64)>,
}

impl StressRun {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.trajectory.iter().map(|d| d.loss).collect()
    }
}

/// Initial iterate with i.i.d. `N(0, 1/d)` entries.
pub fn initial_w(d: usize, seed: u64) -> Matrix {
    normal_matrix(d, d, 1.0 / (d as f64).sqrt(), &mut rng_from_seed(seed))
}

/// Full-batch optimization of `problem` with optional bursts.
///
/// Momentum-mode bursts rewrite the optimizer's first moment after it
/// absorbs the gradient, so the direction and the gate both see the bursted
/// buffer. Gradient-mode bursts perturb the gradient before the step.
pub fn run_stress(
    problem: &QuadraticProblem,
    spec: &OptimizerSpec,
    burst: Option<&BurstConfig>,
    options: &StressOptions,
) -> Result<StressRun> {
    if options.total_steps == 0 {
        return Err(invalid("total_steps", "must be at least 1"));
    }
    if options.divergence_factor.is_nan() || options.divergence_factor <= 0.0 {
        return Err(invalid("divergence_factor", "must be positive"));
    }
    let d = problem.dim();
    if let Some(cfg) = burst {
        cfg.validate()?;
        if cfg.count >= d {
            return Err(invalid("count", format!("{} must be below d = {d}", cfg.count)));
        }
    }
    let mut opt = Optimizer::new(spec.clone())?;
    let mut w = initial_w(d, options.init_seed);
    let mut burst_rng = rng_from_seed(burst.map_or(0, |b| b.seed));
    let mut trajectory = Vec::with_capacity(options.total_steps);
    let mut threshold = f64::INFINITY;

    for t in 0..options.total_steps {
        let r = residual(&w, problem);
        let loss = loss_from_residual(&r);
        if t == 0 {
            threshold = options.divergence_factor * loss.max(1.0);
        }
        if !loss.is_finite() || loss > threshold {
            return Ok(StressRun { trajectory, final_w: w, diverged_at: Some((t, loss)) });
        }
        let mut g = grad_from_residual(&r, problem);
        let event = burst.is_some_and(|b| b.is_event(t));

        let report = match burst {
            Some(cfg) if event && cfg.mode == BurstMode::MomentumMultiplicative => {
                let mut failure = None;
                let mut apply = |m: &mut Matrix| match inject_momentum_burst(m, cfg, t, problem.fix_v, &mut burst_rng) {
                    Ok((bursted, _)) => *m = bursted,
                    Err(e) => failure = Some(e),
                };
                let mut hook = MomentumIntercept { apply: &mut apply, persist: cfg.persist };
                let report = opt.step_intercepted("w", &mut w, &g, Some(&mut hook));
                if let Some(e) = failure {
                    return Err(e);
                }
                report?
            }
            Some(cfg) if event => {
                g = inject_gradient_burst(&g, cfg, t, problem.fix_v, &mut burst_rng)?.0;
                opt.step("w", &mut w, &g)?
            }
            _ => opt.step("w", &mut w, &g)?,
        };

        let (r_max, r_q95, c_used_min) = match &report.gate {
            Some(gate) => (gate.r_stats.max, gate.r_stats.q95, gate.c_used_min()),
            None => (f64::NAN, f64::NAN, 1.0),
        };
        trajectory.push(StepDiagnostics {
            step: t,
            loss,
            r_max,
            r_q95,
            c_used_min,
            delta_norm: report.delta_norm,
            burst: event,
            degenerate: report.degenerate,
        });
    }
    Ok(StressRun { trajectory, final_w: w, diverged_at: None })
}
