//! Recency × regime-similarity calibration weights and their diagnostics.

use serde::Serialize;

use crate::error::{Error, Result};

/// `exp(-lambda·(t-i))`.
pub fn recency_weight(t: usize, i: usize, lambda: f64) -> f64 {
    let lag = t.saturating_sub(i) as f64;
    (-lambda * lag).exp()
}

/// Gaussian kernel on standardized embeddings; an infinite bandwidth gives 1.
pub fn gaussian_kernel(z_i: &[f64; 2], z_t: &[f64; 2], h: f64) -> f64 {
    if h.is_infinite() {
        return 1.0;
    }
    let d0 = z_i[0] - z_t[0];
    let d1 = z_i[1] - z_t[1];
    (-(d0 * d0 + d1 * d1) / (2.0 * h * h)).exp()
}

/// Calibration weights over an index set `I_t`, with `n_eff` and effective lag.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightVector {
    pub t: usize,
    pub indices: Vec<usize>,
    pub unnormalized: Vec<f64>,
    pub normalized: Vec<f64>,
    /// `W_t`, the sum of the unnormalized weights.
    pub total: f64,
    pub n_eff: f64,
    pub tau: f64,
    pub fallback_used: bool,
}

impl WeightVector {
    /// Normalizes `unnormalized` and computes the diagnostics.
    ///
    /// If every weight underflowed to zero the vector falls back to uniform
    /// weights over the same indices.
    pub fn from_unnormalized(t: usize, indices: Vec<usize>, mut unnormalized: Vec<f64>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyInput);
        }
        if indices.len() != unnormalized.len() {
            return Err(Error::IndexMismatch);
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= t) {
            return Err(Error::InvalidConfig(format!(
                "calibration index {i} is not before t = {t}"
            )));
        }
        if unnormalized.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::NonFinite(format!("calibration weights at t = {t}")));
        }

        let mut max = unnormalized.iter().copied().fold(0.0, f64::max);
        if max == 0.0 {
            log::warn!("all calibration weights underflowed at t = {t}; using uniform weights");
            unnormalized.iter_mut().for_each(|w| *w = 1.0);
            max = 1.0;
        }
        let total: f64 = unnormalized.iter().sum();
        let normalized = unnormalized.iter().map(|w| w / total).collect();

        // Diagnostics on max-scaled weights avoid underflow in the squares and
        // are exact for uniform weights.
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut lag_sum = 0.0;
        for (w, &i) in unnormalized.iter().zip(&indices) {
            let u = w / max;
            sum += u;
            sum_sq += u * u;
            lag_sum += u * (t - i) as f64;
        }

        Ok(Self {
            t,
            indices,
            unnormalized,
            normalized,
            total,
            n_eff: sum * sum / sum_sq,
            tau: lag_sum / sum,
            fallback_used: false,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Recency-only weights over `indices`.
pub fn time_only_weights(t: usize, indices: &[usize], lambda: f64) -> Result<WeightVector> {
    let w = indices.iter().map(|&i| recency_weight(t, i, lambda)).collect();
    WeightVector::from_unnormalized(t, indices.to_vec(), w)
}

/// `w_i(t) = exp(-lambda·(t-i))·K_h(z_i, z_t)` for each buffered index.
pub fn build_weights(
    t: usize,
    indices: &[usize],
    z_buffer: &[[f64; 2]],
    z_t: &[f64; 2],
    lambda: f64,
    h: f64,
) -> Result<WeightVector> {
    if indices.len() != z_buffer.len() {
        return Err(Error::IndexMismatch);
    }
    let w = indices
        .iter()
        .zip(z_buffer)
        .map(|(&i, z_i)| recency_weight(t, i, lambda) * gaussian_kernel(z_i, z_t, h))
        .collect();
    WeightVector::from_unnormalized(t, indices.to_vec(), w)
}

/// Replaces `wv` by the time-only weights when `wv.n_eff < n_min`.
pub fn apply_ess_safeguard(
    wv: WeightVector,
    time_only: WeightVector,
    n_min: Option<usize>,
) -> Result<WeightVector> {
    if wv.t != time_only.t || wv.indices != time_only.indices {
        return Err(Error::IndexMismatch);
    }
    match n_min {
        Some(n_min) if wv.n_eff < n_min as f64 => Ok(WeightVector {
            fallback_used: true,
            ..time_only
        }),
        _ => Ok(wv),
    }
}
