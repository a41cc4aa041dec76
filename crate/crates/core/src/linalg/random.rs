use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::Matrix;
use crate::rng::{normal_matrix, rng_from_seed, Rng};

/// Request for a `d x d` SPD factor with condition number `kappa`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionedFactorSpec {
    pub dim: usize,
    pub kappa: f64,
    pub seed: u64,
}

/// Haar-like random orthogonal matrix: Gram-Schmidt (with one
/// re-orthogonalization pass) of a Gaussian matrix. The implied `R` factor
/// has a positive diagonal, which fixes the signs.
pub fn random_orthogonal(dim: usize, rng: &mut Rng) -> Matrix {
    assert!(dim >= 1, "random_orthogonal needs dim >= 1");
    loop {
        if let Some(q) = orthonormalize_columns(&normal_matrix(dim, dim, 1.0, rng)) {
            return q;
        }
    }
}

pub fn random_orthogonal_seeded(dim: usize, seed: u64) -> Matrix {
    random_orthogonal(dim, &mut rng_from_seed(seed))
}

// Returns None if the input is numerically rank deficient.
fn orthonormalize_columns(a: &Matrix) -> Option<Matrix> {
    let (n, k) = a.shape();
    let mut cols: Vec<Vec<f64>> = (0..k).map(|j| a.column(j)).collect();
    for j in 0..k {
        let orig = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for _pass in 0..2 {
            for p in 0..j {
                let dot: f64 = cols[p].iter().zip(&cols[j]).map(|(x, y)| x * y).sum();
                let (done, cur) = cols.split_at_mut(j);
                for (c, q) in cur[0].iter_mut().zip(&done[p]) {
                    *c -= dot * q;
                }
            }
        }
        let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-10 * orig.max(f64::MIN_POSITIVE) {
            return None;
        }
        cols[j].iter_mut().for_each(|v| *v /= norm);
    }
    Some(Matrix::from_fn(n, k, |i, j| cols[j][i]))
}

/// Log-uniform spectrum `kappa^((i-1)/(d-1))`, `i = 1..d`, ascending.
pub fn log_uniform_spectrum(dim: usize, kappa: f64) -> Vec<f64> {
    if dim == 1 {
        return vec![1.0];
    }
    (0..dim).map(|i| kappa.powf(i as f64 / (dim - 1) as f64)).collect()
}

/// `U diag(sigma) U^T` for a random orthogonal `U` and [`log_uniform_spectrum`].
pub fn conditioned_spd(spec: &ConditionedFactorSpec) -> Result<Matrix> {
    let mut rng = rng_from_seed(spec.seed);
    conditioned_spd_with(spec.dim, spec.kappa, &mut rng).map(|(m, _)| m)
}

/// Like [`conditioned_spd`] but drawing the rotation from `rng`; also returns
/// the rotation.
pub fn conditioned_spd_with(dim: usize, kappa: f64, rng: &mut Rng) -> Result<(Matrix, Matrix)> {
    if dim == 0 {
        return Err(invalid("dim", "must be positive"));
    }
    if !kappa.is_finite() || kappa < 1.0 {
        return Err(invalid("kappa", format!("{kappa} must be finite and >= 1")));
    }
    if dim == 1 && kappa != 1.0 {
        return Err(invalid("kappa", "a 1x1 factor can only have kappa = 1"));
    }
    let sigma = log_uniform_spectrum(dim, kappa);
    let u = random_orthogonal(dim, rng);
    let us = u.scale_columns(&sigma);
    // Fill the upper triangle and mirror, so the result is exactly symmetric.
    let mut m = Matrix::zeros(dim, dim);
    for i in 0..dim {
        for j in i..dim {
            let v: f64 = (0..dim).map(|k| us[(i, k)] * u[(j, k)]).sum();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok((m, u))
}
