//! Weighted quantiles, the inflated conformal level and the randomized
//! weighted conformal p-value.

use crate::error::{Error, Result};

/// Slack allowed when comparing cumulative weight against the level.
///
/// Normalized weights only sum to one up to rounding, so `k` uniform weights
/// of `1/n` can accumulate to slightly less than `k/n`.
pub const LEVEL_TOLERANCE: f64 = 1e-12;

/// `inf { q : Σ w_i 1{v_i <= q} >= level }` over the input values.
///
/// Values are sorted together with their weights, equal values have their
/// weights merged before the threshold test. If the level is not reached
/// (weights summing to less than one) the maximum value is returned.
pub fn weighted_quantile(values: &[f64], weights: &[f64], level: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if values.len() != weights.len() {
        return Err(Error::IndexMismatch);
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "quantile level must lie in (0,1], got {level}"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("quantile values".into()));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::NonFinite("quantile weights".into()));
    }

    let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(weights.iter().copied()).collect();
    // Total order on (value, weight) makes the result independent of input order.
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let threshold = level - LEVEL_TOLERANCE;
    let mut cum = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let v = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == v {
            cum += pairs[i].1;
            i += 1;
        }
        if cum >= threshold {
            return Ok(v);
        }
    }
    Ok(pairs[pairs.len() - 1].0)
}

/// Higher-convention empirical quantile: the `ceil(level·n)`-th order statistic.
pub fn empirical_quantile(values: &[f64], level: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let w = 1.0 / values.len() as f64;
    let weights = vec![w; values.len()];
    weighted_quantile(values, &weights, level)
}

/// `min{1, (1-alpha)(1 + w_test / total)}`.
pub fn inflated_level(alpha: f64, total: f64, w_test: f64) -> f64 {
    ((1.0 - alpha) * (1.0 + w_test / total)).min(1.0)
}

/// Conformal threshold `ĉ_t`: the weighted quantile of past scores at level
/// `1-alpha`, or at the inflated level when `correction` is set.
pub fn conformal_threshold(
    scores: &[f64],
    normalized: &[f64],
    alpha: f64,
    correction: bool,
    total: f64,
    w_test: f64,
) -> Result<f64> {
    let level = if correction {
        inflated_level(alpha, total, w_test)
    } else {
        1.0 - alpha
    };
    weighted_quantile(scores, normalized, level)
}

/// Randomized weighted conformal p-value for a one-sided score.
///
/// `(Σ w_i 1{s_i >= s_test} + w_test·u) / (W + w_test)` with unnormalized
/// weights `w_i` and `u` uniform on `[0, 1]`.
pub fn conformal_pvalue(scores: &[f64], weights: &[f64], s_test: f64, w_test: f64, u: f64) -> f64 {
    let mut above = 0.0;
    let mut total = 0.0;
    for (s, w) in scores.iter().zip(weights) {
        total += w;
        if *s >= s_test {
            above += w;
        }
    }
    (above + w_test * u) / (total + w_test)
}
