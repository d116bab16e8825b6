//! Markov regime-switching return generator and i.i.d. score streams, built
//! on [`CounterRng`] so outputs are reproducible from the seed alone.
//!
//! Stream layout for a seed: stream 0 drives regime transitions (counter
//! `t`), stream 1 the Gaussian return innovations (normal counter `t`),
//! stream 2 i.i.d. scores (counter `t`).

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::data::ReturnSeries;
use crate::error::{Error, Result};
use crate::rng::CounterRng;

const TRANSITION_STREAM: u64 = 0;
const RETURN_STREAM: u64 = 1;
const SCORE_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeState {
    /// Daily mean return.
    pub mean: f64,
    /// Daily volatility, strictly positive.
    pub vol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeModel {
    pub states: Vec<RegimeState>,
    /// Row-stochastic transition matrix.
    pub transition: Vec<Vec<f64>>,
    pub len: usize,
    pub seed: u64,
}

impl RegimeModel {
    /// Two-state calm/stress model: vol 0.8% / 2.5% daily, zero mean,
    /// persistence 0.98 / 0.95.
    pub fn calm_stress(len: usize, seed: u64) -> Self {
        Self {
            states: vec![
                RegimeState { mean: 0.0, vol: 0.008 },
                RegimeState { mean: 0.0, vol: 0.025 },
            ],
            transition: vec![vec![0.98, 0.02], vec![0.05, 0.95]],
            len,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.states.len();
        if k == 0 {
            return Err(Error::InvalidConfig("regime model needs at least one state".into()));
        }
        if self.len == 0 {
            return Err(Error::InvalidConfig("simulation length must be positive".into()));
        }
        if let Some(s) = self.states.iter().find(|s| !(s.vol > 0.0 && s.vol.is_finite() && s.mean.is_finite())) {
            return Err(Error::InvalidConfig(format!("invalid regime state {s:?}")));
        }
        if self.transition.len() != k || self.transition.iter().any(|row| row.len() != k) {
            return Err(Error::InvalidConfig(format!("transition matrix must be {k}x{k}")));
        }
        for row in &self.transition {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidConfig(format!("transition row {row:?} is not stochastic")));
            }
        }
        Ok(())
    }
}

/// Consecutive weekdays starting at 2000-01-03.
pub fn synthetic_dates(len: usize) -> Vec<NaiveDate> {
    let mut d = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

/// Simulates returns and the hidden regime path. The chain starts in state 0.
pub fn simulate(model: &RegimeModel) -> Result<(ReturnSeries, Vec<usize>)> {
    model.validate()?;
    let transitions = CounterRng::new(model.seed, TRANSITION_STREAM);
    let innovations = CounterRng::new(model.seed, RETURN_STREAM);
    let mut path = Vec::with_capacity(model.len);
    let mut returns = Vec::with_capacity(model.len);
    let mut state = 0usize;
    for t in 0..model.len {
        if t > 0 {
            let u = transitions.uniform_at(t as u64);
            let row = &model.transition[state];
            let mut cum = 0.0;
            // Falls through to the last state with positive mass on rounding.
            let mut next = row.iter().rposition(|p| *p > 0.0).unwrap_or(state);
            for (j, p) in row.iter().enumerate() {
                cum += p;
                if u < cum {
                    next = j;
                    break;
                }
            }
            state = next;
        }
        let s = model.states[state];
        path.push(state);
        returns.push(s.mean + s.vol * innovations.normal_at(t as u64));
    }
    let series = ReturnSeries::new(synthetic_dates(model.len), returns)?;
    Ok((series, path))
}

/// Distribution of i.i.d. synthetic conformity scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScoreDist {
    Normal { mean: f64, sd: f64 },
    Uniform { low: f64, high: f64 },
    Constant(f64),
}

pub fn simulate_iid_scores(dist: ScoreDist, len: usize, seed: u64) -> Vec<f64> {
    let rng = CounterRng::new(seed, SCORE_STREAM);
    (0..len as u64)
        .map(|c| match dist {
            ScoreDist::Normal { mean, sd } => mean + sd * rng.normal_at(c),
            ScoreDist::Uniform { low, high } => low + (high - low) * rng.uniform_at(c),
            ScoreDist::Constant(v) => v,
        })
        .collect()
}
