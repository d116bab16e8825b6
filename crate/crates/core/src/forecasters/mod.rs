//! Base `(1-alpha)`-quantile forecasters producing `q̂_t` from data at
//! indices `< t`.

mod external;
mod gbdt;

use chrono::NaiveDate;

pub use external::load_external_forecasts;
pub use gbdt::{gbdt_quantile_forecast, pinball_loss, GbdtParams, QuantileGbdt};

use crate::data::{LossSeries, ReturnSeries};
use crate::error::{Error, Result};
use crate::regime::{mar5, rv21, RV_WINDOW};
use crate::wquantile::empirical_quantile;

/// Per-date base forecasts; entries before `valid_from` are absent, and an
/// adapter series may also end before the last date.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSeries {
    dates: Vec<NaiveDate>,
    qhat: Vec<f64>,
    valid_from: usize,
    /// Number of model fits that saw constant targets.
    pub degenerate_fits: usize,
}

impl ForecastSeries {
    /// `qhat` must be finite from `valid_from` on; earlier entries are ignored.
    pub fn new(dates: Vec<NaiveDate>, mut qhat: Vec<f64>, valid_from: usize) -> Result<Self> {
        if dates.len() != qhat.len() {
            return Err(Error::DateMismatch(format!(
                "{} dates but {} forecasts",
                dates.len(),
                qhat.len()
            )));
        }
        if valid_from >= qhat.len() {
            return Err(Error::InsufficientHistory {
                needed: valid_from,
                got: qhat.len(),
            });
        }
        if let Some(k) = qhat[valid_from..].iter().position(|q| !q.is_finite()) {
            return Err(Error::NonFinite(format!("forecast on {}", dates[valid_from + k])));
        }
        qhat[..valid_from].iter_mut().for_each(|q| *q = f64::NAN);
        Ok(Self {
            dates,
            qhat,
            valid_from,
            degenerate_fits: 0,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn valid_from(&self) -> usize {
        self.valid_from
    }

    pub fn len(&self) -> usize {
        self.qhat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.qhat.is_empty()
    }

    pub fn get(&self, t: usize) -> Option<f64> {
        self.qhat
            .get(t)
            .copied()
            .filter(|q| t >= self.valid_from && q.is_finite())
    }
}

/// Rolling empirical `(1-alpha)` quantile of the previous `window` losses.
pub fn hs_forecast(losses: &LossSeries, alpha: f64, window: usize) -> Result<ForecastSeries> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let min_window = (1.0 / alpha).ceil() as usize;
    if window < min_window {
        return Err(Error::InvalidConfig(format!(
            "HS window {window} is below ceil(1/alpha) = {min_window}"
        )));
    }
    let y = losses.losses();
    if y.len() <= window {
        return Err(Error::InsufficientHistory {
            needed: window,
            got: y.len(),
        });
    }
    let level = 1.0 - alpha;
    let mut qhat = vec![f64::NAN; y.len()];
    for t in window..y.len() {
        qhat[t] = empirical_quantile(&y[t - window..t], level)?;
    }
    ForecastSeries::new(losses.dates().to_vec(), qhat, window)
}

/// Causal covariates; row `t` uses returns with index `<= t-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    names: Vec<String>,
    values: Vec<f64>,
    rows: usize,
    valid_from: usize,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, values: Vec<f64>, valid_from: usize) -> Result<Self> {
        if names.is_empty() || !values.len().is_multiple_of(names.len()) {
            return Err(Error::InvalidConfig("feature matrix shape mismatch".into()));
        }
        let rows = values.len() / names.len();
        Ok(Self {
            names,
            values,
            rows,
            valid_from,
        })
    }

    /// `r_{t-1}, ..., r_{t-5}, RV21_t, MAR5_t`.
    pub fn default_features(returns: &ReturnSeries) -> Result<Self> {
        let r = returns.returns();
        let mut names: Vec<String> = (1..=5).map(|k| format!("ret_lag{k}")).collect();
        names.push("rv21".into());
        names.push("mar5".into());
        let ncols = names.len();
        let mut values = vec![f64::NAN; r.len() * ncols];
        for t in RV_WINDOW..r.len() {
            let row = &mut values[t * ncols..(t + 1) * ncols];
            for k in 1..=5 {
                row[k - 1] = r[t - k];
            }
            row[5] = rv21(r, t)?;
            row[6] = mar5(r, t)?;
        }
        Self::new(names, values, RV_WINDOW)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn ncols(&self) -> usize {
        self.names.len()
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn valid_from(&self) -> usize {
        self.valid_from
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let n = self.ncols();
        &self.values[t * n..(t + 1) * n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synthetic_dates;
    use crate::wquantile::weighted_quantile;
    use proptest::prelude::*;

    fn losses(values: Vec<f64>) -> LossSeries {
        LossSeries::new(synthetic_dates(values.len()), values).unwrap()
    }

    #[test]
    fn hs_window_of_ranks() {
        let mut v: Vec<f64> = (1..=100).map(f64::from).collect();
        v.push(0.0);
        let f = hs_forecast(&losses(v), 0.01, 100).unwrap();
        assert_eq!(f.valid_from(), 100);
        assert_eq!(f.get(100), Some(99.0));
        assert_eq!(f.get(99), None);
    }

    #[test]
    fn hs_constant_and_errors() {
        let f = hs_forecast(&losses(vec![0.02; 150]), 0.01, 100).unwrap();
        assert!((100..150).all(|t| f.get(t) == Some(0.02)));
        assert!(hs_forecast(&losses(vec![0.02; 150]), 0.01, 99).is_err());
        assert!(matches!(
            hs_forecast(&losses(vec![0.02; 100]), 0.01, 100),
            Err(Error::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn default_features_are_lagged() {
        let r: Vec<f64> = (0..40).map(|i| i as f64 * 1e-3).collect();
        let rs = ReturnSeries::new(synthetic_dates(40), r.clone()).unwrap();
        let fm = FeatureMatrix::default_features(&rs).unwrap();
        assert_eq!(fm.ncols(), 7);
        assert_eq!(fm.row(30)[0], r[29]);
        assert_eq!(fm.row(30)[4], r[25]);
        assert_eq!(fm.row(30)[5], rv21(&r, 30).unwrap());
    }

    proptest! {
        #[test]
        fn hs_matches_uniform_weighted_quantile(v in prop::collection::vec(-0.05f64..0.05, 260..300), t_off in 0usize..8) {
            let f = hs_forecast(&losses(v.clone()), 0.01, 252).unwrap();
            let t = 252 + t_off;
            let window = &v[t - 252..t];
            let w = vec![1.0 / 252.0; 252];
            prop_assert_eq!(f.get(t).unwrap(), weighted_quantile(window, &w, 0.99).unwrap());
        }

        #[test]
        fn hs_is_translation_equivariant(v in prop::collection::vec(-64i32..64, 120..130), shift in -16i32..16) {
            let base: Vec<f64> = v.iter().map(|k| *k as f64 / 1024.0).collect();
            let delta = shift as f64 / 256.0;
            let moved: Vec<f64> = base.iter().map(|x| x + delta).collect();
            let a = hs_forecast(&losses(base), 0.05, 100).unwrap();
            let b = hs_forecast(&losses(moved), 0.05, 100).unwrap();
            for t in 100..a.len() {
                prop_assert_eq!(b.get(t).unwrap(), a.get(t).unwrap() + delta);
            }
        }

        #[test]
        fn hs_is_causal(v in prop::collection::vec(-0.05f64..0.05, 130..140), at in 100usize..130, bump in 0.1f64..1.0) {
            let mut perturbed = v.clone();
            perturbed[at] += bump;
            let a = hs_forecast(&losses(v), 0.05, 100).unwrap();
            let b = hs_forecast(&losses(perturbed), 0.05, 100).unwrap();
            for t in 100..=at {
                prop_assert_eq!(a.get(t), b.get(t));
            }
        }
    }
}
