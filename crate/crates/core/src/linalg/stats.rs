use crate::error::{invalid, Error, Result};

/// Inclusive linearly interpolated quantile (the `q * (n - 1)` rank rule).
///
/// `q = 0.5` on an even-length input gives the midpoint of the two central
/// order statistics.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("quantile of an empty set"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(invalid("q", format!("{q} is outside [0, 1]")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("NaN in quantile input".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, q))
}

/// Same as [`quantile`] for input already sorted ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn median(values: &[f64]) -> Result<f64> {
    quantile(values, 0.5)
}
