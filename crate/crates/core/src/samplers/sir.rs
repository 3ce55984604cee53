//! Sampling importance resampling on log weights.

use rand::Rng;

use crate::error::{Error, Result};

/// Normalize log weights by max-subtraction and resample `n_draws` indices
/// with replacement, proportional to the weights.
///
/// Fails when every weight is zero (or the inputs contain NaN), since no
/// meaningful resampling distribution exists.
pub fn sir_indices<R: Rng + ?Sized>(
    log_weights: &[f64],
    n_draws: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if log_weights.is_empty() {
        return Err(Error::invalid("no proposals to resample from"));
    }
    if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
        return Err(Error::DegenerateWeights);
    }
    let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateWeights);
    }
    // Cumulative unnormalized weights after max subtraction.
    let mut cdf = Vec::with_capacity(log_weights.len());
    let mut total = 0.0;
    for lw in log_weights {
        total += (lw - max).exp();
        cdf.push(total);
    }
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::DegenerateWeights);
    }
    let mut out = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let u: f64 = rng.random::<f64>() * total;
        // First index whose cumulative weight exceeds u.
        let idx = match cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(i) => i,
            Err(i) => i,
        };
        out.push(idx.min(cdf.len() - 1));
    }
    Ok(out)
}

/// Effective sample size of a set of log weights,
/// `(sum w)^2 / sum w^2` after max subtraction.
pub fn effective_sample_size(log_weights: &[f64]) -> f64 {
    let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return 0.0;
    }
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for lw in log_weights {
        let w = (lw - max).exp();
        s1 += w;
        s2 += w * w;
    }
    if s2 > 0.0 {
        s1 * s1 / s2
    } else {
        0.0
    }
}
