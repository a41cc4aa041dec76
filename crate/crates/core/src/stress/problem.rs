use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{conditioned_spd_with, Matrix};
use crate::rng::{normal_matrix, rng_from_seed};

/// `f(W) = 1/2 |A W B - T|_F^2` with SPD `A = U S_A U^T`, `B = V S_B V^T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticProblem {
    pub a: Matrix,
    pub b: Matrix,
    pub t_target: Matrix,
    pub kappa: f64,
    pub u_basis: Matrix,
    pub v_basis: Matrix,
    pub fix_v: bool,
    pub seed: u64,
}

impl QuadraticProblem {
    pub fn dim(&self) -> usize {
        self.a.rows()
    }
}

/// Builds `A`, `B` from independent rotations (in that order from one seeded
/// stream), then `T` with standard normal entries.
pub fn build_problem(d: usize, kappa: f64, fix_v: bool, seed: u64) -> Result<QuadraticProblem> {
    if d < 2 {
        return Err(invalid("d", format!("{d} must be at least 2")));
    }
    let mut rng = rng_from_seed(seed);
    let (a, u_basis) = conditioned_spd_with(d, kappa, &mut rng)?;
    let (b, v_basis) = conditioned_spd_with(d, kappa, &mut rng)?;
    let t_target = normal_matrix(d, d, 1.0, &mut rng);
    Ok(QuadraticProblem { a, b, t_target, kappa, u_basis, v_basis, fix_v, seed })
}

/// `A W B - T`.
pub fn residual(w: &Matrix, p: &QuadraticProblem) -> Matrix {
    let mut r = p.a.matmul(w).matmul(&p.b);
    r.axpy(-1.0, &p.t_target);
    r
}

pub fn quadratic_loss(w: &Matrix, p: &QuadraticProblem) -> f64 {
    loss_from_residual(&residual(w, p))
}

pub(crate) fn loss_from_residual(r: &Matrix) -> f64 {
    0.5 * r.as_slice().iter().map(|v| v * v).sum::<f64>()
}

/// `A^T (A W B - T) B^T`.
pub fn quadratic_grad(w: &Matrix, p: &QuadraticProblem) -> Matrix {
    grad_from_residual(&residual(w, p), p)
}

pub(crate) fn grad_from_residual(r: &Matrix, p: &QuadraticProblem) -> Matrix {
    // A and B are symmetric by construction
    p.a.matmul(r).matmul(&p.b)
}
