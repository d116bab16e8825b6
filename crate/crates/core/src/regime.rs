//! Two-dimensional regime embedding `z_t = (RV21_t, MAR5_t)`.
//!
//! Both coordinates at index `t` are computed from returns `r_{t-k}` with
//! `k >= 1` only, so the embedding at `t` is known before `y_t` is realized.
//! Coordinates are standardized with statistics fitted before the test
//! segment, and test dates are bucketed into realized-volatility quintiles
//! for stratified evaluation.

use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{ReturnSeries, SplitRanges};
use crate::error::{Error, Result};

pub const RV_WINDOW: usize = 21;
pub const MAR_WINDOW: usize = 5;
pub const TRADING_DAYS: f64 = 252.0;

/// Annualized 21-day realized volatility from `r_{t-21..t-1}` (sample std).
pub fn rv21(returns: &[f64], t: usize) -> Result<f64> {
    if t < RV_WINDOW || t > returns.len() {
        return Err(Error::InsufficientHistory {
            needed: RV_WINDOW,
            got: t,
        });
    }
    let window = &returns[t - RV_WINDOW..t];
    let n = window.len() as f64;
    // Shifting by the first value keeps constant windows at exactly zero.
    let shift = window[0];
    let mean = window.iter().map(|r| r - shift).sum::<f64>() / n;
    let ss: f64 = window.iter().map(|r| (r - shift - mean) * (r - shift - mean)).sum();
    Ok(TRADING_DAYS.sqrt() * (ss / (n - 1.0)).sqrt())
}

/// Mean absolute return over `r_{t-5..t-1}`.
pub fn mar5(returns: &[f64], t: usize) -> Result<f64> {
    if t < MAR_WINDOW || t > returns.len() {
        return Err(Error::InsufficientHistory {
            needed: MAR_WINDOW,
            got: t,
        });
    }
    Ok(returns[t - MAR_WINDOW..t].iter().map(|r| r.abs()).sum::<f64>() / MAR_WINDOW as f64)
}

const FEATURE_NAMES: [&str; 2] = ["rv21", "mar5"];

/// Per-coordinate z-score transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: [f64; 2],
    pub std: [f64; 2],
    pub source_range: Range<usize>,
}

impl StandardizationStats {
    pub fn apply(&self, raw: [f64; 2]) -> [f64; 2] {
        [
            (raw[0] - self.mean[0]) / self.std[0],
            (raw[1] - self.mean[1]) / self.std[1],
        ]
    }

    pub fn invert(&self, z: [f64; 2]) -> [f64; 2] {
        [
            z[0] * self.std[0] + self.mean[0],
            z[1] * self.std[1] + self.mean[1],
        ]
    }
}

/// Fits mean and sample std of each coordinate over `raw[range]`.
pub fn fit_standardizer(raw: &[[f64; 2]], range: Range<usize>) -> Result<StandardizationStats> {
    if range.end > raw.len() || range.len() < 2 {
        return Err(Error::InsufficientLength {
            len: range.len().min(raw.len()),
            needed: 2,
        });
    }
    let rows = &raw[range.clone()];
    let n = rows.len() as f64;
    let mut mean = [0.0; 2];
    let mut std = [0.0; 2];
    for k in 0..2 {
        let mu = rows.iter().map(|r| r[k]).sum::<f64>() / n;
        let ss: f64 = rows.iter().map(|r| (r[k] - mu) * (r[k] - mu)).sum();
        let sd = (ss / (n - 1.0)).sqrt();
        if !sd.is_finite() {
            return Err(Error::NonFinite(format!("{} feature", FEATURE_NAMES[k])));
        }
        if sd <= 0.0 {
            return Err(Error::DegenerateFeature(FEATURE_NAMES[k]));
        }
        mean[k] = mu;
        std[k] = sd;
    }
    Ok(StandardizationStats {
        mean,
        std,
        source_range: range,
    })
}

/// Which pre-test data the standardizer is fitted on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StandardizeOn {
    Train,
    #[default]
    Pretest,
}

impl FromStr for StandardizeOn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(StandardizeOn::Train),
            "pretest" => Ok(StandardizeOn::Pretest),
            other => Err(Error::InvalidConfig(format!(
                "standardize-on must be train or pretest, got `{other}`"
            ))),
        }
    }
}

impl StandardizeOn {
    /// Index range the standardizer is fitted on, clipped to valid embeddings.
    pub fn range(self, splits: &SplitRanges) -> Range<usize> {
        let end = match self {
            StandardizeOn::Train => splits.train.end,
            StandardizeOn::Pretest => splits.val.end,
        };
        RV_WINDOW.max(splits.train.start)..end
    }
}

/// Raw and standardized regime features for every date of a series.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeEmbedding {
    raw: Vec<[f64; 2]>,
    standardized: Vec<[f64; 2]>,
    valid_from: usize,
    stats: StandardizationStats,
}

impl RegimeEmbedding {
    /// Embedding with standardization fitted on `stats_range`.
    pub fn build(returns: &ReturnSeries, stats_range: Range<usize>) -> Result<Self> {
        let raw = raw_features(returns.returns());
        let valid_from = RV_WINDOW.max(MAR_WINDOW);
        if stats_range.start < valid_from {
            return Err(Error::InsufficientHistory {
                needed: valid_from,
                got: stats_range.start,
            });
        }
        let stats = fit_standardizer(&raw, stats_range)?;
        Ok(Self::with_stats(raw, valid_from, stats))
    }

    /// Embedding using previously fitted statistics.
    pub fn from_stats(returns: &ReturnSeries, stats: StandardizationStats) -> Self {
        let raw = raw_features(returns.returns());
        Self::with_stats(raw, RV_WINDOW.max(MAR_WINDOW), stats)
    }

    fn with_stats(raw: Vec<[f64; 2]>, valid_from: usize, stats: StandardizationStats) -> Self {
        let standardized = raw
            .iter()
            .enumerate()
            .map(|(t, r)| {
                if t < valid_from {
                    [f64::NAN; 2]
                } else {
                    stats.apply(*r)
                }
            })
            .collect();
        Self {
            raw,
            standardized,
            valid_from,
            stats,
        }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn valid_from(&self) -> usize {
        self.valid_from
    }

    pub fn stats(&self) -> &StandardizationStats {
        &self.stats
    }

    pub fn raw(&self, t: usize) -> Option<[f64; 2]> {
        (t >= self.valid_from && t < self.raw.len()).then(|| self.raw[t])
    }

    /// Standardized embedding at `t`.
    pub fn z(&self, t: usize) -> Option<[f64; 2]> {
        (t >= self.valid_from && t < self.raw.len()).then(|| self.standardized[t])
    }

    /// RV21 over an index range; every index must be valid.
    pub fn rv21_range(&self, range: Range<usize>) -> Result<Vec<f64>> {
        if range.start < self.valid_from || range.end > self.raw.len() {
            return Err(Error::InsufficientHistory {
                needed: self.valid_from,
                got: range.start,
            });
        }
        Ok(self.raw[range].iter().map(|r| r[0]).collect())
    }
}

/// Raw features at every index; entries before the warm-up are NaN.
fn raw_features(returns: &[f64]) -> Vec<[f64; 2]> {
    (0..returns.len())
        .map(|t| match (rv21(returns, t), mar5(returns, t)) {
            (Ok(rv), Ok(mar)) => [rv, mar],
            _ => [f64::NAN; 2],
        })
        .collect()
}

/// Quintile label (0..=4) for each value by rank; ties go to the earlier
/// position first. Bucket sizes differ by at most one, larger buckets first.
pub fn assign_vol_quintiles(values: &[f64]) -> Vec<u8> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let base = n / 5;
    let extra = n % 5;
    let mut labels = vec![0u8; n];
    let mut rank = 0;
    for bucket in 0..5u8 {
        let size = base + usize::from((bucket as usize) < extra);
        for &idx in &order[rank..rank + size] {
            labels[idx] = bucket;
        }
        rank += size;
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn series(returns: Vec<f64>) -> ReturnSeries {
        let start = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        let dates = (0..returns.len())
            .map(|i| start + chrono::Days::new(i as u64))
            .collect();
        ReturnSeries::new(dates, returns).unwrap()
    }

    #[test]
    fn rv21_of_constant_window_is_zero() {
        let r = vec![0.01; 30];
        assert_eq!(rv21(&r, 21).unwrap(), 0.0);
        assert!(matches!(rv21(&r, 20), Err(Error::InsufficientHistory { .. })));
    }

    #[test]
    fn rv21_alternating_matches_two_pass_oracle() {
        let r: Vec<f64> = (0..21).map(|i| if i % 2 == 0 { 0.01 } else { -0.01 }).collect();
        // Oracle: 11 of +0.01, 10 of -0.01; mean 0.01/21.
        let mean = 0.01 / 21.0;
        let ss: f64 = 11.0 * (0.01f64 - mean).powi(2) + 10.0 * (-0.01f64 - mean).powi(2);
        let expected = 252f64.sqrt() * (ss / 20.0).sqrt();
        assert!((rv21(&r, 21).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn rv21_is_homogeneous() {
        let r: Vec<f64> = (0..25).map(|i| ((i * 7919) % 13) as f64 * 1e-3 - 0.006).collect();
        let doubled: Vec<f64> = r.iter().map(|x| 2.0 * x).collect();
        let a = rv21(&r, 24).unwrap();
        let b = rv21(&doubled, 24).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-15);
    }

    #[test]
    fn mar5_examples() {
        let r = [0.01, -0.01, 0.02, 0.0, -0.02];
        assert!((mar5(&r, 5).unwrap() - 0.012).abs() < 1e-15);
        assert_eq!(mar5(&[0.0; 5], 5).unwrap(), 0.0);
        let flipped: Vec<f64> = r.iter().map(|x| -x).collect();
        assert_eq!(mar5(&flipped, 5).unwrap(), mar5(&r, 5).unwrap());
        assert!(mar5(&r, 4).is_err());
    }

    #[test]
    fn standardizer_hand_example() {
        let raw = [[1.0, 1.0], [3.0, 3.0]];
        let s = fit_standardizer(&raw, 0..2).unwrap();
        assert_eq!(s.mean, [2.0, 2.0]);
        assert!((s.std[0] - 2f64.sqrt()).abs() < 1e-15);
        assert!((s.std[1] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn standardizer_is_identity_on_z_scores() {
        let raw = [[-1.0, 1.0], [1.0, -1.0], [0.0, 0.0]];
        let s = fit_standardizer(&raw, 0..3).unwrap();
        for r in raw {
            let z = s.apply(r);
            assert!((z[0] - r[0]).abs() < 1e-10 && (z[1] - r[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_coordinate_is_degenerate() {
        let raw = [[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]];
        assert!(matches!(
            fit_standardizer(&raw, 0..3),
            Err(Error::DegenerateFeature("mar5"))
        ));
    }

    #[test]
    fn standardized_range_has_zero_mean_unit_std() {
        let r: Vec<f64> = (0..300).map(|i| ((i * 37 % 101) as f64 - 50.0) * 4e-4).collect();
        let emb = RegimeEmbedding::build(&series(r), 21..200).unwrap();
        let zs: Vec<[f64; 2]> = (21..200).map(|t| emb.z(t).unwrap()).collect();
        for k in 0..2 {
            let n = zs.len() as f64;
            let mean = zs.iter().map(|z| z[k]).sum::<f64>() / n;
            let var = zs.iter().map(|z| (z[k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            assert!(mean.abs() < 1e-10);
            assert!((var.sqrt() - 1.0).abs() < 1e-10);
        }
        assert_eq!(emb.z(20), None);
        for t in [21, 150, 299] {
            let back = emb.stats().invert(emb.z(t).unwrap());
            let raw = emb.raw(t).unwrap();
            assert!((back[0] - raw[0]).abs() < 1e-10 && (back[1] - raw[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn quintile_sizes_and_ties() {
        let labels = assign_vol_quintiles(&vec![0.0; 1751]);
        let mut sizes = [0usize; 5];
        for l in labels {
            sizes[l as usize] += 1;
        }
        assert_eq!(sizes, [351, 350, 350, 350, 350]);

        assert_eq!(assign_vol_quintiles(&[1.0, 2.0, 3.0, 4.0, 5.0]), vec![0, 1, 2, 3, 4]);
        assert_eq!(assign_vol_quintiles(&[7.0; 10]), vec![0, 0, 1, 1, 2, 2, 3, 3, 4, 4]);
        assert_eq!(assign_vol_quintiles(&[5.0, 4.0, 3.0, 2.0, 1.0]), vec![4, 3, 2, 1, 0]);
    }
}
