//! TrasMuon and its NorMuon backbone.
//!
//! One step, for a matrix parameter `W` (`m x n`) with gradient `G`:
//!
//! ```text
//! W      <- (1 - eta*lambda) W
//! M      <- beta1 M + (1 - beta1) G
//! O      <- NS(M / (|M|_F + eps); T)
//! v_row  <- beta2 v_row + (1 - beta2) mean_j O_ij^2
//! O_base <- diag((v_row + eps)^-1/2) O
//! eta^   <- eta sqrt(mn) / (|O_base|_F + eps)
//! E_j    <- sum_i M_ij^2,  E_ref <- EMA of median_j E_j
//! S, C   <- S + gamma^2, C + gamma^2 c_last
//! every K steps after warmup: c_ema <- EMA of the soft clip of E_j / E_ref
//! c      <- 1 during warmup, else (1 - rho) c_ema + rho C / (S + eps)
//! W      <- W - eta^ O_base diag(c)
//! ```
//!
//! NorMuon is the same path with the gate disabled and `rho = 0`, so the two
//! are bit-identical whenever the gate would not fire.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{column_energies, frobenius_norm, iterate_normalized, row_mean_squares, Matrix, NsCoefficients};
use crate::optim::gate::{compute_gate, ratio_stats, RatioStats};
use crate::optim::{MomentumIntercept, StepReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrasMuonHyper {
    /// Base learning rate; also the per-entry RMS bound of every update.
    pub eta: f64,
    pub beta1: f64,
    /// Decay of the row second moments.
    pub beta2: f64,
    pub eps: f64,
    /// Newton-Schulz step count.
    pub t_ns: usize,
    pub ns_coefficients: NsCoefficients,
    /// Decoupled weight decay `lambda`; the shrink factor is `1 - eta*lambda`.
    pub weight_decay: f64,
    pub c_min: f64,
    /// Steepness of the soft clip `1 / (1 + alpha log(1 + r))`.
    pub alpha: f64,
    /// Decay of the energy-reference EMA.
    pub beta_e: f64,
    /// Decay of the clip EMA.
    pub beta_c: f64,
    /// When false the clip is never computed and stays at 1.
    pub gate_enabled: bool,
    /// Restrict damping to columns with ratio above `k`.
    pub trigger_enabled: bool,
    pub k: f64,
    /// Gate recomputation period `K`.
    pub gate_period: usize,
    /// Steps `t <= warmup_steps` apply no clip.
    pub warmup_steps: usize,
    /// Weight of the long-horizon average in the applied clip.
    pub rho: f64,
    /// `gamma = gamma_scale * eta` weights the long-horizon average.
    pub gamma_scale: f64,
    /// Linear ramp of `gamma` over this many steps; 0 keeps it constant.
    pub gamma_warmup_steps: usize,
}

impl Default for TrasMuonHyper {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            beta1: 0.95,
            beta2: 0.95,
            eps: 1e-8,
            t_ns: 5,
            ns_coefficients: NsCoefficients::default(),
            weight_decay: 0.0,
            c_min: 0.1,
            alpha: 1.0,
            beta_e: 0.99,
            beta_c: 0.9,
            gate_enabled: true,
            trigger_enabled: true,
            k: 3.0,
            gate_period: 10,
            warmup_steps: 50,
            rho: 0.5,
            gamma_scale: 1.0,
            gamma_warmup_steps: 0,
        }
    }
}

impl TrasMuonHyper {
    /// NorMuon backbone: the same path with the gate off and no mixing.
    pub fn normuon(mut self) -> Self {
        self.gate_enabled = false;
        self.rho = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        fn unit_interval(name: &'static str, v: f64) -> Result<()> {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(invalid(name, format!("{v} must lie in [0, 1)")))
            }
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid("eta", format!("{} must be positive", self.eta)));
        }
        unit_interval("beta1", self.beta1)?;
        unit_interval("beta2", self.beta2)?;
        unit_interval("beta_e", self.beta_e)?;
        unit_interval("beta_c", self.beta_c)?;
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(invalid("eps", "must be positive"));
        }
        if self.t_ns == 0 {
            return Err(invalid("t_ns", "must be at least 1"));
        }
        if !(self.weight_decay >= 0.0 && self.eta * self.weight_decay < 1.0) {
            return Err(invalid("weight_decay", "must be >= 0 with eta * weight_decay < 1"));
        }
        if !(self.c_min > 0.0 && self.c_min <= 1.0) {
            return Err(invalid("c_min", format!("{} must lie in (0, 1]", self.c_min)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha", "must be finite and >= 0"));
        }
        if self.k.is_nan() || self.k < 1.0 {
            return Err(invalid("k", format!("{} must be >= 1", self.k)));
        }
        if self.gate_period == 0 {
            return Err(invalid("gate_period", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(invalid("rho", format!("{} must lie in [0, 1]", self.rho)));
        }
        if !(self.gamma_scale > 0.0 && self.gamma_scale.is_finite()) {
            return Err(invalid("gamma_scale", "must be positive"));
        }
        Ok(())
    }

    /// Effective step weight `gamma_t` at step `t`.
    pub fn gamma_at(&self, t: u64) -> f64 {
        let gamma = self.gamma_scale * self.eta;
        if self.gamma_warmup_steps == 0 {
            gamma
        } else {
            gamma * ((t + 1) as f64 / self.gamma_warmup_steps as f64).min(1.0)
        }
    }
}

/// Per-matrix optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamState {
    pub m: Matrix,
    pub v_row: Vec<f64>,
    pub e_ref: f64,
    pub c_ema: Vec<f64>,
    pub c_last: Vec<f64>,
    pub s_acc: f64,
    pub c_acc: Vec<f64>,
    /// Index `t` of the next step.
    pub step: u64,
}

impl ParamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: Matrix::zeros(rows, cols),
            v_row: vec![0.0; rows],
            e_ref: 0.0,
            c_ema: vec![1.0; cols],
            c_last: vec![1.0; cols],
            s_acc: 0.0,
            c_acc: vec![0.0; cols],
            step: 0,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.m.shape()
    }
}

/// `M <- beta1 M + (1 - beta1) G`.
pub fn momentum_update(m: &mut Matrix, g: &Matrix, beta1: f64) -> Result<()> {
    if !m.same_shape(g) {
        return Err(Error::ShapeMismatch { expected: m.shape(), got: g.shape() });
    }
    let one_minus = 1.0 - beta1;
    for (mi, &gi) in m.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *mi = beta1 * *mi + one_minus * gi;
    }
    Ok(())
}

/// Newton-Schulz direction of `m` after normalizing by `|m|_F + eps`.
/// Returns `(zero, true)` when `|m|_F <= eps`.
pub fn orthogonalized_direction(m: &Matrix, t_ns: usize, coeffs: &NsCoefficients, eps: f64) -> (Matrix, bool) {
    let norm = frobenius_norm(m);
    if norm <= eps {
        return (Matrix::zeros(m.rows(), m.cols()), true);
    }
    (iterate_normalized(m, norm + eps, t_ns, coeffs), false)
}

/// Updates `v_row` from `o` and returns `diag((v_row + eps)^-1/2) o`.
pub fn row_scale(o: &Matrix, v_row: &mut [f64], beta2: f64, eps: f64) -> Matrix {
    assert_eq!(v_row.len(), o.rows());
    let one_minus = 1.0 - beta2;
    let scales: Vec<f64> = row_mean_squares(o)
        .into_iter()
        .zip(v_row.iter_mut())
        .map(|(ms, v)| {
            *v = beta2 * *v + one_minus * ms;
            1.0 / (*v + eps).sqrt()
        })
        .collect();
    o.scale_rows(&scales)
}

/// `eta sqrt(mn) / (|o_base|_F + eps)`.
pub fn calibrated_step_size(o_base: &Matrix, eta: f64, eps: f64) -> f64 {
    let (m, n) = o_base.shape();
    eta * ((m * n) as f64).sqrt() / (frobenius_norm(o_base) + eps)
}

/// Median-EMA reference. The first update (reference still 0) assigns the
/// current median directly.
pub fn update_energy_reference(e_ref: &mut f64, energies: &[f64], beta_e: f64) -> Result<f64> {
    let current = crate::linalg::median(energies)?;
    if *e_ref == 0.0 {
        *e_ref = current;
    } else {
        *e_ref = beta_e * *e_ref + (1.0 - beta_e) * current;
    }
    Ok(current)
}

/// Advances the schedule-free accumulators with the cached clip and returns
/// the applied clip `c`, also caching it in `c_last`.
///
/// During warmup the applied clip is all ones. Outside warmup the mix
/// `(1 - rho) c_ema + rho c_avg` is clamped to `[c_min, 1]`.
pub fn schedule_free_mix(state: &mut ParamState, hyper: &TrasMuonHyper, gamma: f64, in_warmup: bool) -> Vec<f64> {
    let w = gamma * gamma;
    state.s_acc += w;
    for (acc, &c) in state.c_acc.iter_mut().zip(&state.c_last) {
        *acc += w * c;
    }
    let denom = state.s_acc + hyper.eps;
    let used: Vec<f64> = if in_warmup {
        vec![1.0; state.c_ema.len()]
    } else {
        state
            .c_ema
            .iter()
            .zip(&state.c_acc)
            .map(|(&ema, &acc)| {
                let avg = acc / denom;
                (ema + hyper.rho * (avg - ema)).clamp(hyper.c_min, 1.0)
            })
            .collect()
    };
    state.c_last.clone_from(&used);
    used
}

/// Everything a TrasMuon step observed about its gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOutput {
    /// Applied clip `c_t`.
    pub c_used: Vec<f64>,
    /// Ratios `E_j / (E_ref + eps)` at this step, whether or not the gate was
    /// recomputed.
    pub r_stats: RatioStats,
    /// Columns with ratio above `k`.
    pub triggered_count: usize,
    /// Whether `c_ema` was refreshed this step.
    pub recomputed: bool,
}

impl GateOutput {
    pub fn c_used_min(&self) -> f64 {
        self.c_used.iter().copied().fold(1.0, f64::min)
    }
}

fn check_inputs(w: &Matrix, g: &Matrix, state: &ParamState) -> Result<()> {
    if !w.same_shape(g) {
        return Err(Error::ShapeMismatch { expected: w.shape(), got: g.shape() });
    }
    if state.shape() != w.shape() {
        return Err(Error::ShapeMismatch { expected: state.shape(), got: w.shape() });
    }
    if let Some(entry) = g.first_non_finite() {
        return Err(Error::NonFiniteGradient { param: String::new(), entry });
    }
    Ok(())
}

pub(crate) fn working_momentum<'a>(
    m: &'a mut Matrix,
    intercept: Option<&mut MomentumIntercept<'_>>,
) -> Cow<'a, Matrix> {
    match intercept {
        None => Cow::Borrowed(m),
        Some(hook) if hook.persist => {
            (hook.apply)(m);
            Cow::Borrowed(m)
        }
        Some(hook) => {
            let mut copy = m.clone();
            (hook.apply)(&mut copy);
            Cow::Owned(copy)
        }
    }
}

/// One TrasMuon step on `w` in place.
pub fn trasmuon_step(w: &mut Matrix, g: &Matrix, state: &mut ParamState, hyper: &TrasMuonHyper) -> Result<StepReport> {
    trasmuon_step_intercepted(w, g, state, hyper, None)
}

/// [`trasmuon_step`] on the NorMuon backbone.
pub fn normuon_step(w: &mut Matrix, g: &Matrix, state: &mut ParamState, hyper: &TrasMuonHyper) -> Result<StepReport> {
    trasmuon_step(w, g, state, &hyper.clone().normuon())
}

/// [`trasmuon_step`] with an optional rewrite of the momentum between the
/// momentum update and everything that reads it.
pub fn trasmuon_step_intercepted(
    w: &mut Matrix,
    g: &Matrix,
    state: &mut ParamState,
    hyper: &TrasMuonHyper,
    intercept: Option<&mut MomentumIntercept<'_>>,
) -> Result<StepReport> {
    check_inputs(w, g, state)?;
    let t = state.step;
    let (rows, cols) = w.shape();

    if hyper.weight_decay != 0.0 {
        w.scale_in_place(1.0 - hyper.eta * hyper.weight_decay);
    }
    momentum_update(&mut state.m, g, hyper.beta1)?;
    let m = working_momentum(&mut state.m, intercept);

    let (o, degenerate) = orthogonalized_direction(&m, hyper.t_ns, &hyper.ns_coefficients, hyper.eps);
    if degenerate {
        drop(m);
        state.step += 1;
        return Ok(StepReport {
            delta_norm: 0.0,
            eta_hat: 0.0,
            degenerate: true,
            gate: Some(GateOutput {
                c_used: state.c_last.clone(),
                r_stats: RatioStats::zero(),
                triggered_count: 0,
                recomputed: false,
            }),
        });
    }

    let o_base = row_scale(&o, &mut state.v_row, hyper.beta2, hyper.eps);
    let eta_hat = calibrated_step_size(&o_base, hyper.eta, hyper.eps);

    let energies = column_energies(&m);
    drop(m);
    update_energy_reference(&mut state.e_ref, &energies, hyper.beta_e)?;

    let in_warmup = t <= hyper.warmup_steps as u64;
    let mut recomputed = false;
    if hyper.gate_enabled && !in_warmup && t.is_multiple_of(hyper.gate_period as u64) {
        let gate = compute_gate(&energies, state.e_ref, hyper);
        let keep = 1.0 - hyper.beta_c;
        for (ema, inst) in state.c_ema.iter_mut().zip(gate.c_inst) {
            *ema += keep * (inst - *ema);
        }
        recomputed = true;
    }
    let c_used = schedule_free_mix(state, hyper, hyper.gamma_at(t), in_warmup);

    let mut delta_sq = 0.0;
    for i in 0..rows {
        let w_row = w.row_mut(i);
        for ((wv, &ov), &c) in w_row.iter_mut().zip(o_base.row(i)).zip(&c_used) {
            let d = eta_hat * ov * c;
            delta_sq += d * d;
            *wv -= d;
        }
    }
    let delta_norm = delta_sq.sqrt();
    debug_assert!(
        delta_norm <= hyper.eta * ((rows * cols) as f64).sqrt(),
        "update norm {delta_norm} exceeds eta*sqrt(mn)"
    );

    let r_stats = ratio_stats(&energies, state.e_ref, hyper.eps);
    let triggered_count = energies.iter().filter(|&&e| e / (state.e_ref + hyper.eps) > hyper.k).count();
    state.step += 1;

    Ok(StepReport {
        delta_norm,
        eta_hat,
        degenerate: false,
        gate: Some(GateOutput { c_used, r_stats, triggered_count, recomputed }),
    })
}
