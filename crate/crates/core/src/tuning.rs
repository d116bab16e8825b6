//! Validation-period grid search over calibrator hyperparameters.

use std::cmp::Ordering;
use std::io::Write;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrators::run_calibrator;
use crate::data::{LossSeries, Method, RunConfig};
use crate::error::{Error, Result};
use crate::evaluation::{exceedance_rate, rolling_exceedance, ROLLING_WINDOW};
use crate::forecasters::ForecastSeries;
use crate::regime::RegimeEmbedding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub m_grid: Vec<usize>,
    pub lambda_grid: Vec<f64>,
    #[serde(with = "bandwidth_list")]
    pub h_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    /// Window used for every ACI candidate.
    pub aci_m: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            m_grid: vec![252, 504, 756],
            lambda_grid: vec![0.002, 0.005, 0.01],
            h_grid: vec![0.5, 1.0, 2.0],
            gamma_grid: vec![0.002, 0.005, 0.01, 0.02],
            aci_m: 252,
        }
    }
}

mod bandwidth_list {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct H(#[serde(with = "crate::data::bandwidth_serde")] f64);

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|h| H(*h)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<H>::deserialize(d)?.into_iter().map(|h| h.0).collect())
    }
}

/// One point of the grid. Inactive dimensions hold their neutral values
/// (`λ = 0`, `h = ∞`, `γ = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub m: usize,
    pub lambda: f64,
    #[serde(with = "crate::data::bandwidth_serde")]
    pub h: f64,
    pub gamma: f64,
}

impl Candidate {
    pub fn apply(&self, method: Method, base: &RunConfig) -> RunConfig {
        RunConfig {
            calibrator: method,
            m: self.m,
            lambda: self.lambda,
            h: self.h,
            aci_gamma: if method == Method::Aci { self.gamma } else { base.aci_gamma },
            ..*base
        }
    }

    /// Preference order among equal objectives: larger m, smaller λ,
    /// larger h, smaller γ.
    fn tie_break(&self, other: &Self) -> Ordering {
        other
            .m
            .cmp(&self.m)
            .then(self.lambda.total_cmp(&other.lambda))
            .then(other.h.total_cmp(&self.h))
            .then(self.gamma.total_cmp(&other.gamma))
    }
}

/// Candidates for `method` in grid order.
pub fn candidates(method: Method, grid: &GridSpec) -> Vec<Candidate> {
    let inf = f64::INFINITY;
    match method {
        Method::Swc => grid
            .m_grid
            .iter()
            .map(|&m| Candidate { m, lambda: 0.0, h: inf, gamma: 0.0 })
            .collect(),
        Method::Twc => grid
            .m_grid
            .iter()
            .flat_map(|&m| grid.lambda_grid.iter().map(move |&lambda| Candidate { m, lambda, h: inf, gamma: 0.0 }))
            .collect(),
        Method::Rwc => grid
            .m_grid
            .iter()
            .flat_map(|&m| {
                grid.lambda_grid.iter().flat_map(move |&lambda| {
                    grid.h_grid.iter().map(move |&h| Candidate { m, lambda, h, gamma: 0.0 })
                })
            })
            .collect(),
        Method::Aci => grid
            .gamma_grid
            .iter()
            .map(|&gamma| Candidate { m: grid.aci_m, lambda: 0.0, h: inf, gamma })
            .collect(),
    }
}

/// `|exc - α| + 0.5·max(0, rollmax - α)`.
pub fn objective(val_exceedance: f64, val_rollmax: f64, alpha: f64) -> f64 {
    (val_exceedance - alpha).abs() + 0.5 * (val_rollmax - alpha).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub params: Candidate,
    pub val_exceedance: f64,
    pub val_rollmax: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub method: Method,
    pub alpha: f64,
    pub candidates: Vec<CandidateResult>,
    pub selected: Candidate,
    pub selected_objective: f64,
}

/// Inputs shared by every candidate run.
#[derive(Debug, Clone)]
pub struct TuningData<'a> {
    pub losses: &'a LossSeries,
    pub forecasts: &'a ForecastSeries,
    pub embedding: Option<&'a RegimeEmbedding>,
    /// Validation index range; the buffer is primed from the data before it.
    pub range: Range<usize>,
}

/// Exceedance and maximum rolling exceedance of one candidate.
pub fn evaluate_candidate(data: &TuningData<'_>, cfg: &RunConfig) -> Result<(f64, f64)> {
    let bounds = run_calibrator(data.losses, data.forecasts, data.embedding, cfg, data.range.clone())?;
    let ind = bounds.indicators();
    let exc = exceedance_rate(&ind)?;
    let rollmax = rolling_exceedance(&ind, ROLLING_WINDOW)?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((exc, rollmax))
}

/// Evaluates every candidate in parallel and selects the minimizer of the
/// objective with a deterministic tie-break.
pub fn grid_search(method: Method, grid: &GridSpec, data: &TuningData<'_>, base: &RunConfig) -> Result<TuneResult> {
    let cands = candidates(method, grid);
    if cands.is_empty() {
        return Err(Error::NoCandidates);
    }
    let alpha = base.alpha;
    let results: Vec<CandidateResult> = cands
        .par_iter()
        .map(|c| {
            let (val_exceedance, val_rollmax) = evaluate_candidate(data, &c.apply(method, base))?;
            Ok(CandidateResult {
                params: *c,
                val_exceedance,
                val_rollmax,
                objective: objective(val_exceedance, val_rollmax, alpha),
            })
        })
        .collect::<Result<_>>()?;
    let best = results
        .iter()
        .min_by(|a, b| a.objective.total_cmp(&b.objective).then(a.params.tie_break(&b.params)))
        .expect("nonempty");
    Ok(TuneResult {
        method,
        alpha,
        selected: best.params,
        selected_objective: best.objective,
        candidates: results,
    })
}

fn fmt_h(h: f64) -> String {
    if h.is_infinite() {
        "inf".into()
    } else {
        format!("{h:?}")
    }
}

/// `method,m,lambda,h,gamma,val_exceedance,val_rollmax,objective,selected`.
pub fn write_candidates_csv<W: Write>(out: W, result: &TuneResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method", "m", "lambda", "h", "gamma", "val_exceedance", "val_rollmax", "objective", "selected",
    ])?;
    for c in &result.candidates {
        w.write_record([
            result.method.name().to_string(),
            c.params.m.to_string(),
            format!("{:?}", c.params.lambda),
            fmt_h(c.params.h),
            format!("{:?}", c.params.gamma),
            format!("{:?}", c.val_exceedance),
            format!("{:?}", c.val_rollmax),
            format!("{:?}", c.objective),
            u8::from(c.params == result.selected).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<candidates>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::to_losses;
    use crate::forecasters::hs_forecast;
    use crate::synth::{simulate, RegimeModel};

    #[test]
    fn objective_examples() {
        assert_eq!(objective(0.01, 0.01, 0.01), 0.0);
        assert!((objective(0.012, 0.02, 0.01) - 0.007).abs() < 1e-15);
        assert!((objective(0.008, 0.005, 0.01) - 0.002).abs() < 1e-15);
    }

    #[test]
    fn grid_cardinalities() {
        let g = GridSpec::default();
        assert_eq!(candidates(Method::Rwc, &g).len(), 27);
        assert_eq!(candidates(Method::Twc, &g).len(), 9);
        assert_eq!(candidates(Method::Swc, &g).len(), 3);
        assert_eq!(candidates(Method::Aci, &g).len(), 4);
        assert!(candidates(Method::Aci, &g).iter().all(|c| c.m == 252));
    }

    #[test]
    fn tie_break_order() {
        let c = |m, lambda, h, gamma| Candidate { m, lambda, h, gamma };
        let mut v = vec![
            c(252, 0.002, 2.0, 0.0),
            c(756, 0.01, 0.5, 0.0),
            c(756, 0.002, 0.5, 0.0),
            c(756, 0.002, f64::INFINITY, 0.0),
            c(756, 0.002, f64::INFINITY, 0.01),
        ];
        v.sort_by(|a, b| a.tie_break(b));
        assert_eq!(v[0], c(756, 0.002, f64::INFINITY, 0.0));
        assert_eq!(v[1], c(756, 0.002, f64::INFINITY, 0.01));
        assert_eq!(v[2], c(756, 0.002, 0.5, 0.0));
        assert_eq!(v[4], c(252, 0.002, 2.0, 0.0));
    }

    fn fixture() -> (LossSeries, ForecastSeries, RegimeEmbedding) {
        let (rs, _) = simulate(&RegimeModel::calm_stress(3000, 21)).unwrap();
        let losses = to_losses(&rs);
        let fc = hs_forecast(&losses, 0.01, 250).unwrap();
        let emb = RegimeEmbedding::build(&rs, 21..2000).unwrap();
        (losses, fc, emb)
    }

    #[test]
    fn selection_matches_exhaustive_oracle() {
        let (losses, fc, emb) = fixture();
        let data = TuningData {
            losses: &losses,
            forecasts: &fc,
            embedding: Some(&emb),
            range: 2000..3000,
        };
        let grid = GridSpec {
            m_grid: vec![252, 504],
            lambda_grid: vec![0.002, 0.01],
            h_grid: vec![1.0, 2.0],
            ..GridSpec::default()
        };
        let base = RunConfig::default();
        for method in Method::ALL {
            let res = grid_search(method, &grid, &data, &base).unwrap();
            // Exhaustive oracle: rerun every candidate sequentially.
            let mut best: Option<(f64, Candidate)> = None;
            for c in candidates(method, &grid) {
                let (e, r) = evaluate_candidate(&data, &c.apply(method, &base)).unwrap();
                let obj = objective(e, r, base.alpha);
                let better = match best {
                    None => true,
                    Some((o, b)) => obj < o || (obj == o && c.tie_break(&b) == Ordering::Less),
                };
                if better {
                    best = Some((obj, c));
                }
            }
            let (obj, sel) = best.unwrap();
            assert_eq!(res.selected, sel, "{method}");
            assert_eq!(res.selected_objective, obj);
            assert!(res.candidates.iter().all(|c| res.selected_objective <= c.objective));
            assert_eq!(grid_search(method, &grid, &data, &base).unwrap(), res, "determinism");
        }
    }

    #[test]
    fn single_candidate_passthrough_and_empty_grid() {
        let (losses, fc, emb) = fixture();
        let data = TuningData {
            losses: &losses,
            forecasts: &fc,
            embedding: Some(&emb),
            range: 2000..3000,
        };
        let grid = GridSpec {
            m_grid: vec![504],
            ..GridSpec::default()
        };
        let res = grid_search(Method::Swc, &grid, &data, &RunConfig::default()).unwrap();
        assert_eq!(res.candidates.len(), 1);
        assert_eq!(res.selected.m, 504);
        let empty = GridSpec {
            gamma_grid: vec![],
            ..GridSpec::default()
        };
        assert!(matches!(
            grid_search(Method::Aci, &empty, &data, &RunConfig::default()),
            Err(Error::NoCandidates)
        ));
    }
}
