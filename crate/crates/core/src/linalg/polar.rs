//! Newton-Schulz approximation of the orthogonal polar factor.
//!
//! Each step applies an odd quintic `X <- a X + b (X X^T) X + c (X X^T)^2 X`,
//! which acts on every singular value independently as
//! `s <- a s + b s^3 + c s^5`. The input is first divided by its Frobenius
//! norm so all singular values start in `(0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, Matrix};

/// The quintic used by the Muon reference implementation. It does not have
/// `s = 1` as a fixed point: singular values oscillate in roughly `[0.7, 1.2]`.
pub const MUON_QUINTIC: [f64; 3] = [3.4445, -4.7750, 2.0315];

/// Classical order-5 Newton-Schulz (Pade) step, fixed point `s = 1` with
/// cubic convergence.
pub const NEWTON_SCHULZ_QUINTIC: [f64; 3] = [1.875, -1.25, 0.375];

/// Five greedy minimax quintics for the singular-value interval
/// `[5e-3, 1]`. After all five steps every singular value from that interval
/// lies within `3.6e-4` of 1; smaller ones are amplified monotonically.
pub const MINIMAX_SCHEDULE: [[f64; 3]; 5] = [
    [8.29818035228973, -24.426033168278845, 18.086329647416427],
    [3.91359574949419, -2.9201512652960275, 0.5590801524508677],
    [3.1749833653469075, -2.3807208601512464, 0.49785900416994433],
    [2.189723137635395, -1.567463608585237, 0.4079130854424191],
    [1.8823063477350068, -1.2581022388923295, 0.3758180634025947],
];

/// Coefficient scheme for the iteration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "scheme")]
pub enum NsCoefficients {
    /// [`MINIMAX_SCHEDULE`]; steps past the fifth repeat the convergent
    /// [`NEWTON_SCHULZ_QUINTIC`].
    #[default]
    Minimax,
    /// [`MUON_QUINTIC`] on every step.
    Muon,
    /// [`NEWTON_SCHULZ_QUINTIC`] on every step.
    NewtonSchulz,
    /// A single user-supplied `(a, b, c)` on every step.
    Fixed { a: f64, b: f64, c: f64 },
}

impl NsCoefficients {
    pub fn for_step(&self, step: usize) -> [f64; 3] {
        match self {
            NsCoefficients::Minimax => MINIMAX_SCHEDULE.get(step).copied().unwrap_or(NEWTON_SCHULZ_QUINTIC),
            NsCoefficients::Muon => MUON_QUINTIC,
            NsCoefficients::NewtonSchulz => NEWTON_SCHULZ_QUINTIC,
            NsCoefficients::Fixed { a, b, c } => [*a, *b, *c],
        }
    }

    /// The scalar map the iteration applies to one singular value.
    pub fn apply_scalar(&self, mut s: f64, steps: usize) -> f64 {
        for k in 0..steps {
            let [a, b, c] = self.for_step(k);
            let s2 = s * s;
            s = a * s + b * s2 * s + c * s2 * s2 * s;
        }
        s
    }
}

/// Result of [`newton_schulz_polar`].
#[derive(Debug, Clone)]
pub struct PolarOutput {
    pub factor: Matrix,
    /// Set when the input had zero Frobenius norm; `factor` is then zero.
    pub degenerate: bool,
}

/// Approximates the polar factor `U V^T` of `m` with `steps` iterations.
///
/// Tall inputs are transposed so the Gram matrix uses the smaller dimension.
pub fn newton_schulz_polar(m: &Matrix, steps: usize, coeffs: &NsCoefficients) -> Result<PolarOutput> {
    if let Some(entry) = m.first_non_finite() {
        return Err(Error::NonFinite(format!("Newton-Schulz input entry {entry:?}")));
    }
    let norm = frobenius_norm(m);
    if norm == 0.0 {
        return Ok(PolarOutput { factor: Matrix::zeros(m.rows(), m.cols()), degenerate: true });
    }
    Ok(PolarOutput { factor: iterate_normalized(m, norm, steps, coeffs), degenerate: false })
}

/// Runs the iteration on `m / norm`. `norm` must be positive.
pub(crate) fn iterate_normalized(m: &Matrix, norm: f64, steps: usize, coeffs: &NsCoefficients) -> Matrix {
    let tall = m.rows() > m.cols();
    let mut x = if tall { m.transpose() } else { m.clone() };
    x.scale_in_place(1.0 / norm);
    for k in 0..steps {
        let [a, b, c] = coeffs.for_step(k);
        let gram = x.gram_rows();
        let mut poly = gram.matmul(&gram);
        poly.scale_in_place(c);
        poly.axpy(b, &gram);
        let mut next = poly.matmul(&x);
        next.axpy(a, &x);
        x = next;
    }
    if tall {
        x.transpose()
    } else {
        x
    }
}
