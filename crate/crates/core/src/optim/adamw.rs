use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::optim::trasmuon::working_momentum;
use crate::optim::{MomentumIntercept, StepReport};

/// Adam with bias correction and decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

impl AdamWHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid("lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(invalid("beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("beta2", "must lie in [0, 1)"));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(invalid("eps", "must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.lr * self.weight_decay < 1.0) {
            return Err(invalid("weight_decay", "must be >= 0 with lr * weight_decay < 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWState {
    pub m: Matrix,
    pub v: Matrix,
    pub step: u64,
}

impl AdamWState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { m: Matrix::zeros(rows, cols), v: Matrix::zeros(rows, cols), step: 0 }
    }
}

pub fn adamw_step(w: &mut Matrix, g: &Matrix, state: &mut AdamWState, hyper: &AdamWHyper) -> Result<StepReport> {
    adamw_step_intercepted(w, g, state, hyper, None)
}

/// The intercept sees the first moment after it absorbs `g`.
pub fn adamw_step_intercepted(
    w: &mut Matrix,
    g: &Matrix,
    state: &mut AdamWState,
    hyper: &AdamWHyper,
    intercept: Option<&mut MomentumIntercept<'_>>,
) -> Result<StepReport> {
    if !w.same_shape(g) || !state.m.same_shape(g) {
        return Err(Error::ShapeMismatch { expected: state.m.shape(), got: g.shape() });
    }
    if let Some(entry) = g.first_non_finite() {
        return Err(Error::NonFiniteGradient { param: String::new(), entry });
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (hyper.beta1, hyper.beta2);
    for ((m, v), &gi) in state.m.as_mut_slice().iter_mut().zip(state.v.as_mut_slice()).zip(g.as_slice()) {
        *m = b1 * *m + (1.0 - b1) * gi;
        *v = b2 * *v + (1.0 - b2) * gi * gi;
    }
    let m = working_momentum(&mut state.m, intercept);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    if hyper.weight_decay != 0.0 {
        w.scale_in_place(1.0 - hyper.lr * hyper.weight_decay);
    }
    let mut delta_sq = 0.0;
    for ((wv, &mv), &vv) in w.as_mut_slice().iter_mut().zip(m.as_slice()).zip(state.v.as_slice()) {
        let d = hyper.lr * (mv / bc1) / ((vv / bc2).sqrt() + hyper.eps);
        delta_sq += d * d;
        *wv -= d;
    }
    Ok(StepReport { delta_norm: delta_sq.sqrt(), eta_hat: hyper.lr, degenerate: false, gate: None })
}
