//! Ingest → forecast → calibrate → evaluate for a resolved [`Experiment`].

use std::collections::HashMap;
use std::ops::Range;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::Experiment;
use crate::calibrators::{base_bounds, run_calibrator, BoundSeries};
use crate::data::{load_returns_csv, split, to_losses, BaseKind, LossSeries, Method, ReturnSeries, RunConfig, SplitRanges};
use crate::error::{Error, Result};
use crate::evaluation::{build_report, percentile, BacktestReport};
use crate::forecasters::{gbdt_quantile_forecast, hs_forecast, load_external_forecasts, FeatureMatrix, ForecastSeries};
use crate::regime::{assign_vol_quintiles, RegimeEmbedding};
use crate::tuning::{grid_search, TuneResult, TuningData};

/// Loaded data and base forecasts for one experiment.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub returns: ReturnSeries,
    pub losses: LossSeries,
    pub splits: SplitRanges,
    pub embedding: RegimeEmbedding,
    pub forecasts: ForecastSeries,
    /// Volatility quintile of every test date.
    pub test_labels: HashMap<NaiveDate, u8>,
}

/// Loads the data and computes the base forecasts needed over `eval`.
pub fn prepare(exp: &Experiment, eval: impl Fn(&SplitRanges) -> Range<usize>) -> Result<Prepared> {
    let returns = load_returns_csv(&exp.data, &exp.date_col, &exp.return_col)?;
    prepare_series(exp, returns, eval)
}

pub fn prepare_series(
    exp: &Experiment,
    returns: ReturnSeries,
    eval: impl Fn(&SplitRanges) -> Range<usize>,
) -> Result<Prepared> {
    let losses = to_losses(&returns);
    let splits = split(returns.dates(), &exp.split)?;
    let embedding = RegimeEmbedding::build(&returns, exp.standardize_on.range(&splits))?;
    let forecasts = match exp.base {
        BaseKind::Hs => hs_forecast(&losses, exp.alpha, exp.hs_window)?,
        BaseKind::Gbdt => {
            let features = FeatureMatrix::default_features(&returns)?;
            gbdt_quantile_forecast(
                &features,
                &losses,
                exp.alpha,
                exp.gbdt.window,
                exp.gbdt.refit_every,
                &exp.gbdt.params,
            )?
        }
        BaseKind::External => {
            let path = exp
                .forecasts_file
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("missing required key `forecasts_file`".into()))?;
            load_external_forecasts(path, returns.dates(), eval(&splits))?
        }
    };
    let test = splits.test.clone();
    let rv = embedding.rv21_range(test.clone())?;
    let test_labels = returns.dates()[test]
        .iter()
        .copied()
        .zip(assign_vol_quintiles(&rv))
        .collect();
    Ok(Prepared {
        returns,
        losses,
        splits,
        embedding,
        forecasts,
        test_labels,
    })
}

/// Runs the base and every configured calibrator over the test segment;
/// calibrators run in parallel and come back in manifest order.
pub fn run_all(exp: &Experiment, prep: &Prepared) -> Result<Vec<BoundSeries>> {
    let test = prep.splits.test.clone();
    let mut out = vec![base_bounds(&prep.losses, &prep.forecasts, test.clone())?];
    let calibrated: Vec<BoundSeries> = exp
        .methods
        .par_iter()
        .map(|&m| run_method(prep, &exp.config(m), test.clone()))
        .collect::<Result<_>>()?;
    out.extend(calibrated);
    Ok(out)
}

pub fn run_method(prep: &Prepared, cfg: &RunConfig, range: Range<usize>) -> Result<BoundSeries> {
    run_calibrator(&prep.losses, &prep.forecasts, Some(&prep.embedding), cfg, range)
}

/// Quintile labels of the records of `series`.
pub fn labels_for(prep: &Prepared, series: &BoundSeries) -> Result<Vec<u8>> {
    series
        .records
        .iter()
        .map(|r| {
            prep.test_labels
                .get(&r.date)
                .copied()
                .ok_or_else(|| Error::DateMismatch(format!("{} is not a test date", r.date)))
        })
        .collect()
}

pub fn reports(exp: &Experiment, prep: &Prepared, series: &[BoundSeries]) -> Result<Vec<BacktestReport>> {
    series
        .par_iter()
        .map(|s| build_report(s, &labels_for(prep, s)?, exp.alpha))
        .collect()
}

/// One row of the bandwidth sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(with = "crate::data::bandwidth_serde")]
    pub h: f64,
    pub exceedance_pct: f64,
    pub avg_var_bps: f64,
    pub top_vol_exceedance_pct: f64,
    pub median_n_eff: f64,
    pub p10_n_eff: f64,
    pub fallback_count: usize,
}

/// RWC over the test segment for each bandwidth at the manifest's `(m, λ)`.
pub fn sweep_bandwidth(exp: &Experiment, prep: &Prepared) -> Result<Vec<(SweepRow, BoundSeries)>> {
    let base_cfg = exp.config(Method::Rwc);
    exp.h_list
        .par_iter()
        .map(|h| {
            let cfg = RunConfig { h: h.0, ..base_cfg };
            let series = run_method(prep, &cfg, prep.splits.test.clone())?;
            let report = build_report(&series, &labels_for(prep, &series)?, exp.alpha)?;
            // Localization strength: n_eff of the regime weights before any fallback.
            let n_eff: Vec<f64> = series.records.iter().map(|r| r.n_eff_kernel).collect();
            let row = SweepRow {
                h: h.0,
                exceedance_pct: report.exceedance_pct,
                avg_var_bps: report.avg_var_bps,
                top_vol_exceedance_pct: report.per_quintile_pct[4],
                median_n_eff: percentile(&n_eff, 50.0),
                p10_n_eff: percentile(&n_eff, 10.0),
                fallback_count: series.records.iter().filter(|r| r.fallback_used).count(),
            };
            Ok((row, series))
        })
        .collect()
}

/// Grid search for every configured method on the validation segment.
pub fn tune_all(exp: &Experiment, prep: &Prepared) -> Result<Vec<TuneResult>> {
    let data = TuningData {
        losses: &prep.losses,
        forecasts: &prep.forecasts,
        embedding: Some(&prep.embedding),
        range: prep.splits.val.clone(),
    };
    exp.methods
        .iter()
        .map(|&m| grid_search(m, &exp.grid, &data, &exp.config(m)))
        .collect()
}
