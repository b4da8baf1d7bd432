//! Node statistics: offset variance, the weighted child variance used to
//! score a split, and the per-leaf Gaussian fit.

use crate::error::{Error, Result};

/// Population variance of the offsets (divides by `S`, not `S - 1`).
pub fn offset_variance(offsets: &[f64]) -> Result<f64> {
    if offsets.is_empty() {
        return Err(Error::EmptySamples);
    }
    let n = offsets.len() as f64;
    let mean = offsets.iter().sum::<f64>() / n;
    Ok(offsets.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n)
}

/// Weighted child variance `sum_m (S_m / S) * var_m` over the two children.
/// An empty side contributes nothing.
pub fn split_score(left: &[f64], right: &[f64]) -> Result<f64> {
    let total = (left.len() + right.len()) as f64;
    if total == 0.0 {
        return Err(Error::EmptySamples);
    }
    let mut score = 0.0;
    for side in [left, right] {
        if !side.is_empty() {
            score += side.len() as f64 / total * offset_variance(side)?;
        }
    }
    Ok(score)
}

/// Mean and variance of a normal distribution fitted to the histogram of
/// `offsets`.
///
/// The offsets are binned into `bins` equal-width bins spanning their range,
/// and the Gaussian is fitted to the bin centres weighted by count. With a
/// single component the EM fixed point is reached after one M-step, which is
/// the weighted first and second moment, so that is what is computed. The
/// variance is floored at `variance_floor`.
pub fn fit_leaf_gaussian_em(offsets: &[f64], bins: usize, variance_floor: f64) -> (f64, f64) {
    if offsets.is_empty() {
        return (0.0, variance_floor);
    }
    let bins = bins.max(1);
    let (lo, hi) = offsets.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    let width = (hi - lo) / bins as f64;
    if !(width > 0.0) {
        return (lo, variance_floor);
    }
    let mut counts = vec![0usize; bins];
    for &d in offsets {
        let b = (((d - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let centre = |b: usize| lo + (b as f64 + 0.5) * width;
    let n = offsets.len() as f64;
    let mean = counts.iter().enumerate().map(|(b, &c)| c as f64 * centre(b)).sum::<f64>() / n;
    let var = counts
        .iter()
        .enumerate()
        .map(|(b, &c)| c as f64 * (centre(b) - mean).powi(2))
        .sum::<f64>()
        / n;
    (mean, var.max(variance_floor))
}
