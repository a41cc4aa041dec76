use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{frobenius_norm, random_orthogonal, Matrix};
use crate::rng::{standard_normal, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BurstMode {
    /// Selected momentum columns are multiplied by `amplitude`.
    MomentumMultiplicative,
    /// Selected gradient columns get a random direction of length
    /// `amplitude * |g|_F / sqrt(mn)`.
    GradientAdditive,
}

/// Column-localized burst events every `period` steps from `start_step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BurstConfig {
    pub period: usize,
    pub count: usize,
    pub amplitude: f64,
    pub mode: BurstMode,
    pub start_step: usize,
    pub seed: u64,
    /// Momentum mode: the bursted buffer replaces the stored momentum.
    pub persist: bool,
    /// Gradient mode: upper bound on the perturbation length.
    pub max_alpha: Option<f64>,
}

impl Default for BurstConfig {
    fn default() -> Self {
        Self {
            period: 100,
            count: 4,
            amplitude: 30.0,
            mode: BurstMode::MomentumMultiplicative,
            start_step: 200,
            seed: 0,
            persist: true,
            max_alpha: None,
        }
    }
}

impl BurstConfig {
    pub fn validate(&self) -> Result<()> {
        if self.period == 0 {
            return Err(invalid("period", "must be at least 1"));
        }
        if self.count == 0 {
            return Err(invalid("count", "must be at least 1"));
        }
        match self.mode {
            BurstMode::MomentumMultiplicative if !(self.amplitude >= 1.0 && self.amplitude.is_finite()) => {
                return Err(invalid("amplitude", format!("{} must be finite and >= 1", self.amplitude)));
            }
            BurstMode::GradientAdditive if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) => {
                return Err(invalid("amplitude", format!("{} must be finite and >= 0", self.amplitude)));
            }
            _ => {}
        }
        if let Some(cap) = self.max_alpha {
            if cap.is_nan() || cap < 0.0 {
                return Err(invalid("max_alpha", "must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn is_event(&self, step: usize) -> bool {
        step >= self.start_step && (step - self.start_step).is_multiple_of(self.period)
    }

    fn check_count(&self, cols: usize) -> Result<()> {
        if self.count >= cols {
            return Err(invalid("count", format!("{} must be below the column count {cols}", self.count)));
        }
        Ok(())
    }
}

/// Applies `f` to the selected columns of `x`, in the native basis when
/// `fix_v`, otherwise inside a fresh random column mixing `x -> f(xQ) Q^T`.
fn burst_columns(
    x: &Matrix,
    count: usize,
    fix_v: bool,
    rng: &mut Rng,
    mut f: impl FnMut(&mut Matrix, usize, &mut Rng),
) -> (Matrix, Vec<usize>) {
    let n = x.cols();
    let q = (!fix_v).then(|| random_orthogonal(n, rng));
    let mut cols = sample(rng, n, count).into_vec();
    cols.sort_unstable();
    let mut y = match &q {
        Some(q) => x.matmul(q),
        None => x.clone(),
    };
    for &j in &cols {
        f(&mut y, j, rng);
    }
    if let Some(q) = &q {
        y = y.matmul(&q.transpose());
    }
    (y, cols)
}

/// Off event steps returns `m` unchanged and no columns.
pub fn inject_momentum_burst(
    m: &Matrix,
    cfg: &BurstConfig,
    step: usize,
    fix_v: bool,
    rng: &mut Rng,
) -> Result<(Matrix, Vec<usize>)> {
    cfg.check_count(m.cols())?;
    if !cfg.is_event(step) {
        return Ok((m.clone(), Vec::new()));
    }
    let a = cfg.amplitude;
    Ok(burst_columns(m, cfg.count, fix_v, rng, |y, j, _| {
        let cols = y.cols();
        y.as_mut_slice().iter_mut().skip(j).step_by(cols).for_each(|v| *v *= a);
    }))
}

/// Perturbation length `alpha = amplitude |g|_F / sqrt(mn)`, capped by
/// `max_alpha`.
pub fn burst_alpha(g: &Matrix, cfg: &BurstConfig) -> f64 {
    let alpha = cfg.amplitude * frobenius_norm(g) / (g.len() as f64).sqrt();
    cfg.max_alpha.map_or(alpha, |cap| alpha.min(cap))
}

pub fn inject_gradient_burst(
    g: &Matrix,
    cfg: &BurstConfig,
    step: usize,
    fix_v: bool,
    rng: &mut Rng,
) -> Result<(Matrix, Vec<usize>)> {
    cfg.check_count(g.cols())?;
    if !cfg.is_event(step) {
        return Ok((g.clone(), Vec::new()));
    }
    let alpha = burst_alpha(g, cfg);
    const EPS: f64 = 1e-12;
    Ok(burst_columns(g, cfg.count, fix_v, rng, |y, j, rng| {
        let rows = y.rows();
        let u: Vec<f64> = (0..rows).map(|_| standard_normal(rng)).collect();
        let scale = alpha / (u.iter().map(|v| v * v).sum::<f64>().sqrt() + EPS);
        for (i, ui) in u.iter().enumerate() {
            let cols = y.cols();
            y.as_mut_slice()[i * cols + j] += scale * ui;
        }
    }))
}
