#![allow(dead_code)]

use nalgebra::DMatrix;
use trasmuon::linalg::{median, Matrix};
use trasmuon::stress::StepDiagnostics;

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// `U V^T` from a full SVD.
pub fn svd_polar(m: &Matrix) -> Matrix {
    let svd = to_na(m).svd(true, true);
    from_na(&(svd.u.unwrap() * svd.v_t.unwrap()))
}

pub fn singular_values(m: &Matrix) -> Vec<f64> {
    to_na(m).singular_values().iter().copied().collect()
}

pub fn condition_number(m: &Matrix) -> f64 {
    let s = singular_values(m);
    let max = s.iter().copied().fold(0.0, f64::max);
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

/// Median of the `window` values before `t`.
pub fn trailing_median(xs: &[f64], t: usize, window: usize) -> f64 {
    median(&xs[t - window..t]).unwrap()
}

/// For a burst at `t`: `r_q95` rises above its trailing median at `t`, and
/// `c_used_min` falls below its trailing median at some step in `t..=t+k`.
pub fn closed_loop_response(traj: &[StepDiagnostics], t: usize, k: usize) -> (bool, bool) {
    let r: Vec<f64> = traj.iter().map(|d| d.r_q95).collect();
    let c: Vec<f64> = traj.iter().map(|d| d.c_used_min).collect();
    let ratio_up = r[t] > trailing_median(&r, t, 20);
    let base = trailing_median(&c, t, 20);
    let end = (t + k).min(c.len() - 1);
    let clip_down = c[t..=end].iter().any(|&v| v < base);
    (ratio_up, clip_down)
}

pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    xs.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}
