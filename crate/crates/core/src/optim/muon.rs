use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{frobenius_norm, Matrix, NsCoefficients};
use crate::optim::trasmuon::{momentum_update, orthogonalized_direction, working_momentum};
use crate::optim::{MomentumIntercept, StepReport};

/// Plain Muon: `W <- (1 - lr*lambda) W - lr * scale * NS(M)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MuonHyper {
    pub lr: f64,
    pub beta1: f64,
    pub eps: f64,
    pub t_ns: usize,
    pub ns_coefficients: NsCoefficients,
    pub weight_decay: f64,
    /// Multiply the direction by `sqrt(max(1, rows / cols))`.
    pub shape_scale: bool,
}

impl Default for MuonHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.95,
            eps: 1e-8,
            t_ns: 5,
            ns_coefficients: NsCoefficients::default(),
            weight_decay: 0.0,
            shape_scale: true,
        }
    }
}

impl MuonHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid("lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(invalid("beta1", "must lie in [0, 1)"));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(invalid("eps", "must be positive"));
        }
        if self.t_ns == 0 {
            return Err(invalid("t_ns", "must be at least 1"));
        }
        if !(self.weight_decay >= 0.0 && self.lr * self.weight_decay < 1.0) {
            return Err(invalid("weight_decay", "must be >= 0 with lr * weight_decay < 1"));
        }
        Ok(())
    }

    pub fn direction_scale(&self, rows: usize, cols: usize) -> f64 {
        if self.shape_scale {
            (rows as f64 / cols as f64).max(1.0).sqrt()
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuonState {
    pub m: Matrix,
    pub step: u64,
}

impl MuonState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { m: Matrix::zeros(rows, cols), step: 0 }
    }
}

pub fn muon_step(w: &mut Matrix, g: &Matrix, state: &mut MuonState, hyper: &MuonHyper) -> Result<StepReport> {
    muon_step_intercepted(w, g, state, hyper, None)
}

pub fn muon_step_intercepted(
    w: &mut Matrix,
    g: &Matrix,
    state: &mut MuonState,
    hyper: &MuonHyper,
    intercept: Option<&mut MomentumIntercept<'_>>,
) -> Result<StepReport> {
    if !w.same_shape(g) || !state.m.same_shape(g) {
        return Err(Error::ShapeMismatch { expected: state.m.shape(), got: g.shape() });
    }
    if let Some(entry) = g.first_non_finite() {
        return Err(Error::NonFiniteGradient { param: String::new(), entry });
    }
    if hyper.weight_decay != 0.0 {
        w.scale_in_place(1.0 - hyper.lr * hyper.weight_decay);
    }
    momentum_update(&mut state.m, g, hyper.beta1)?;
    let m = working_momentum(&mut state.m, intercept);
    let (o, degenerate) = orthogonalized_direction(&m, hyper.t_ns, &hyper.ns_coefficients, hyper.eps);
    drop(m);
    state.step += 1;
    if degenerate {
        return Ok(StepReport { delta_norm: 0.0, eta_hat: 0.0, degenerate: true, gate: None });
    }
    let step = hyper.lr * hyper.direction_scale(w.rows(), w.cols());
    w.axpy(-step, &o);
    Ok(StepReport { delta_norm: step * frobenius_norm(&o), eta_hat: step, degenerate: false, gate: None })
}
