//! Gradient-boosted regression trees under the pinball loss.
//!
//! Each round fits a least-squares tree to the negative pinball gradient and
//! then replaces every leaf value by the higher-convention `level`-quantile of
//! the residuals falling in that leaf, so a round never increases the
//! training loss when `subsample = 1`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, ForecastSeries};
use crate::data::LossSeries;
use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::wquantile::empirical_quantile;

/// Smallest rolling training window accepted by [`gbdt_quantile_forecast`].
pub const MIN_TRAINING_WINDOW: usize = 252;

const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub subsample: f64,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            rounds: 200,
            max_depth: 3,
            learning_rate: 0.05,
            subsample: 1.0,
            min_samples_leaf: 20,
            seed: 0,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must lie in (0,1], got {}",
                self.learning_rate
            )));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "subsample must lie in (0,1], got {}",
                self.subsample
            )));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidConfig("min_samples_leaf must be positive".into()));
        }
        Ok(())
    }
}

/// Mean pinball loss of the constant-per-row predictions `q` at `level`.
pub fn pinball_loss(y: &[f64], q: &[f64], level: f64) -> f64 {
    let total: f64 = y
        .iter()
        .zip(q)
        .map(|(y, q)| {
            let r = y - q;
            if r >= 0.0 {
                level * r
            } else {
                (level - 1.0) * r
            }
        })
        .sum();
    total / y.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Best variance-reducing split of `rows` (given in per-feature sorted order).
fn best_split(
    sorted: &[Vec<usize>],
    in_node: &[bool],
    n_rows: usize,
    x: &[&[f64]],
    grad: &[f64],
    min_leaf: usize,
) -> Option<SplitChoice> {
    let mut best: Option<SplitChoice> = None;
    for (f, order) in sorted.iter().enumerate() {
        let rows: Vec<usize> = order.iter().copied().filter(|&i| in_node[i]).collect();
        let total: f64 = rows.iter().map(|&i| grad[i]).sum();
        let parent = total * total / n_rows as f64;
        let mut left_sum = 0.0;
        for k in 0..rows.len() - 1 {
            left_sum += grad[rows[k]];
            let n_left = k + 1;
            let n_right = rows.len() - n_left;
            if n_left < min_leaf || n_right < min_leaf {
                continue;
            }
            let (a, b) = (x[rows[k]][f], x[rows[k + 1]][f]);
            if a == b {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / n_left as f64 + right_sum * right_sum / n_right as f64 - parent;
            if gain > MIN_GAIN && best.as_ref().is_none_or(|s| gain > s.gain) {
                best = Some(SplitChoice {
                    feature: f,
                    threshold: a + (b - a) / 2.0,
                    gain,
                });
            }
        }
    }
    best
}

/// Boosted quantile regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileGbdt {
    level: f64,
    base_score: f64,
    learning_rate: f64,
    trees: Vec<Tree>,
}

impl QuantileGbdt {
    pub fn fit(x: &[&[f64]], y: &[f64], level: f64, params: &GbdtParams) -> Result<Self> {
        Self::fit_traced(x, y, level, params).map(|(m, _)| m)
    }

    /// Fits and returns the training pinball loss before the first round and
    /// after each round.
    pub fn fit_traced(
        x: &[&[f64]],
        y: &[f64],
        level: f64,
        params: &GbdtParams,
    ) -> Result<(Self, Vec<f64>)> {
        params.validate()?;
        if y.is_empty() {
            return Err(Error::EmptyInput);
        }
        if x.len() != y.len() {
            return Err(Error::IndexMismatch);
        }
        if x.iter().flat_map(|r| r.iter()).chain(y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("GBDT training data".into()));
        }
        let n = y.len();
        let ncols = x[0].len();
        let base_score = empirical_quantile(y, level)?;
        let mut fitted = vec![base_score; n];
        let mut trace = vec![pinball_loss(y, &fitted, level)];

        let sorted: Vec<Vec<usize>> = (0..ncols)
            .map(|f| {
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
                order
            })
            .collect();

        let mut trees = Vec::with_capacity(params.rounds);
        let mut grad = vec![0.0; n];
        for round in 0..params.rounds {
            let sampled: Vec<bool> = if params.subsample < 1.0 {
                let rng = CounterRng::new(params.seed, round as u64);
                (0..n).map(|i| rng.uniform_at(i as u64) < params.subsample).collect()
            } else {
                vec![true; n]
            };
            for i in 0..n {
                grad[i] = if y[i] - fitted[i] > 0.0 { level } else { level - 1.0 };
            }

            let mut nodes = vec![Node::Leaf(0.0)];
            let mut stack = vec![(0usize, sampled, 0usize)];
            while let Some((id, members, depth)) = stack.pop() {
                let count = members.iter().filter(|m| **m).count();
                if count == 0 {
                    continue;
                }
                let split = if depth < params.max_depth && count >= 2 * params.min_samples_leaf {
                    best_split(&sorted, &members, count, x, &grad, params.min_samples_leaf)
                } else {
                    None
                };
                match split {
                    Some(s) => {
                        let (left, right) = (nodes.len(), nodes.len() + 1);
                        nodes.push(Node::Leaf(0.0));
                        nodes.push(Node::Leaf(0.0));
                        nodes[id] = Node::Split {
                            feature: s.feature,
                            threshold: s.threshold,
                            left,
                            right,
                        };
                        let goes_left: Vec<bool> = (0..n)
                            .map(|i| members[i] && x[i][s.feature] <= s.threshold)
                            .collect();
                        let goes_right: Vec<bool> = (0..n).map(|i| members[i] && !goes_left[i]).collect();
                        stack.push((right, goes_right, depth + 1));
                        stack.push((left, goes_left, depth + 1));
                    }
                    None => {
                        let residuals: Vec<f64> = (0..n)
                            .filter(|&i| members[i])
                            .map(|i| y[i] - fitted[i])
                            .collect();
                        nodes[id] = Node::Leaf(empirical_quantile(&residuals, level)?);
                    }
                }
            }
            let tree = Tree { nodes };
            for i in 0..n {
                fitted[i] += params.learning_rate * tree.predict(x[i]);
            }
            trace.push(pinball_loss(y, &fitted, level));
            trees.push(tree);
        }

        Ok((
            Self {
                level,
                base_score,
                learning_rate: params.learning_rate,
                trees,
            },
            trace,
        ))
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn base_score(&self) -> f64 {
        self.base_score
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees
            .iter()
            .fold(self.base_score, |acc, t| acc + self.learning_rate * t.predict(x))
    }
}

/// Rolling-window GBDT forecasts, refitted every `refit_every` steps.
///
/// The first forecast is at `features.valid_from() + window`; the model used
/// at `t` was fitted on the `window` rows immediately before its fit time.
pub fn gbdt_quantile_forecast(
    features: &FeatureMatrix,
    losses: &LossSeries,
    alpha: f64,
    window: usize,
    refit_every: usize,
    params: &GbdtParams,
) -> Result<ForecastSeries> {
    if window < MIN_TRAINING_WINDOW {
        return Err(Error::InvalidConfig(format!(
            "GBDT window {window} is below the minimum {MIN_TRAINING_WINDOW}"
        )));
    }
    if refit_every == 0 {
        return Err(Error::InvalidConfig("refit_every must be positive".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha must lie in (0,1), got {alpha}")));
    }
    params.validate()?;
    let y = losses.losses();
    if features.nrows() != y.len() {
        return Err(Error::DateMismatch(format!(
            "{} feature rows for {} losses",
            features.nrows(),
            y.len()
        )));
    }
    let first = features.valid_from() + window;
    if first >= y.len() {
        return Err(Error::InsufficientHistory {
            needed: first,
            got: y.len(),
        });
    }
    let level = 1.0 - alpha;
    let fit_times: Vec<usize> = (first..y.len()).step_by(refit_every).collect();
    let fits: Vec<(QuantileGbdt, bool)> = fit_times
        .par_iter()
        .map(|&t| {
            let rows: Vec<&[f64]> = (t - window..t).map(|i| features.row(i)).collect();
            let targets = &y[t - window..t];
            let degenerate = targets.iter().all(|v| *v == targets[0]);
            let p = if degenerate {
                GbdtParams { rounds: 0, ..*params }
            } else {
                *params
            };
            QuantileGbdt::fit(&rows, targets, level, &p).map(|m| (m, degenerate))
        })
        .collect::<Result<_>>()?;

    let mut qhat = vec![f64::NAN; y.len()];
    for (k, (model, _)) in fits.iter().enumerate() {
        let start = fit_times[k];
        let end = fit_times.get(k + 1).copied().unwrap_or(y.len());
        for (t, q) in qhat.iter_mut().enumerate().take(end).skip(start) {
            *q = model.predict(features.row(t));
        }
    }
    let degenerate = fits.iter().filter(|(_, d)| *d).count();
    if degenerate > 0 {
        log::warn!("{degenerate} GBDT fits saw constant targets; their forecasts are constant");
    }
    let mut out = ForecastSeries::new(losses.dates().to_vec(), qhat, first)?;
    out.degenerate_fits = degenerate;
    Ok(out)
}
