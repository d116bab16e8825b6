//! Sequential conformal calibration of VaR bounds.
//!
//! [`OnlineCalibrator`] is the state machine: at time `t` it issues
//! `U_t = q̂_t + ĉ_t` from the buffered scores, then observes `y_t`, appends
//! `s_t = y_t - q̂_t` and trims the buffer to the most recent `m` entries.
//! SWC, TWC, RWC and ACI differ only in how the buffered scores are weighted
//! and at which level the weighted quantile is taken.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use serde::Serialize;

use crate::data::{LossSeries, Method, RunConfig};
use crate::error::{Error, Result};
use crate::forecasters::ForecastSeries;
use crate::regime::RegimeEmbedding;
use crate::weighting::{apply_ess_safeguard, build_weights, time_only_weights, WeightVector};
use crate::wquantile::conformal_threshold;

/// Weight of the test point in the inflated level.
const TEST_POINT_WEIGHT: f64 = 1.0;

/// One-sided conformity score `y - q̂`.
pub fn compute_score(loss: f64, qhat: f64) -> f64 {
    loss - qhat
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BufferEntry {
    pub index: usize,
    pub score: f64,
    pub z: [f64; 2],
}

/// Most recent `capacity` scores with their embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationBuffer {
    capacity: usize,
    entries: VecDeque<BufferEntry>,
}

impl CalibrationBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last_index(&self) -> Option<usize> {
        self.entries.back().map(|e| e.index)
    }

    pub fn entries(&self) -> impl Iterator<Item = &BufferEntry> {
        self.entries.iter()
    }

    pub fn push(&mut self, entry: BufferEntry) -> Result<()> {
        if let Some(last) = self.last_index() {
            if entry.index <= last {
                return Err(Error::InvalidConfig(format!(
                    "buffer index {} does not follow {last}",
                    entry.index
                )));
            }
        }
        if !entry.score.is_finite() {
            return Err(Error::NonFinite(format!("score at index {}", entry.index)));
        }
        self.entries.push_back(entry);
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
        Ok(())
    }
}

/// Adaptive miscoverage level, clipped to `[clip.0, clip.1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AciState {
    pub alpha_t: f64,
    pub target: f64,
    pub gamma: f64,
    pub clip: (f64, f64),
}

impl AciState {
    pub fn new(target: f64, gamma: f64, clip: (f64, f64)) -> Self {
        Self {
            alpha_t: target,
            target,
            gamma,
            clip,
        }
    }

    /// `α_{t+1} = clip(α_t + γ(α - 1{exceed}))`.
    pub fn update(&mut self, exceeded: bool) {
        let err = if exceeded { 1.0 } else { 0.0 };
        self.alpha_t = (self.alpha_t + self.gamma * (self.target - err)).clamp(self.clip.0, self.clip.1);
    }
}

/// A bound issued at `index` before its loss is seen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Issued {
    pub index: usize,
    pub qhat: f64,
    pub chat: f64,
    pub upper: f64,
    pub n_eff: f64,
    pub tau: f64,
    pub fallback_used: bool,
    pub alpha_t: Option<f64>,
    /// n_eff of the regime-weighted candidate before the ESS safeguard;
    /// equals `n_eff` unless the safeguard fired.
    pub n_eff_kernel: f64,
}

/// A completed step: the issued bound plus the realized loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Step {
    pub issued: Issued,
    pub loss: f64,
    pub score: f64,
    /// `1{s_t > ĉ_t}`.
    pub exceed: bool,
}

#[derive(Debug, Clone)]
pub struct OnlineCalibrator {
    cfg: RunConfig,
    buffer: CalibrationBuffer,
    aci: Option<AciState>,
    pending: Option<(Issued, [f64; 2])>,
}

impl OnlineCalibrator {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let aci = (cfg.calibrator == Method::Aci).then(|| AciState::new(cfg.alpha, cfg.aci_gamma, cfg.aci_clip));
        Ok(Self {
            buffer: CalibrationBuffer::new(cfg.m),
            cfg,
            aci,
            pending: None,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn buffer(&self) -> &CalibrationBuffer {
        &self.buffer
    }

    pub fn aci_state(&self) -> Option<&AciState> {
        self.aci.as_ref()
    }

    /// Adds a historical score without issuing a bound.
    pub fn prime(&mut self, index: usize, score: f64, z: [f64; 2]) -> Result<()> {
        if self.pending.is_some() {
            return Err(Error::InvalidConfig("cannot prime while a bound is pending".into()));
        }
        self.buffer.push(BufferEntry { index, score, z })
    }

    /// Weights of the current buffer for issuing at `t`, with the n_eff of
    /// the weights before the ESS safeguard.
    pub fn weights(&self, t: usize, z_t: &[f64; 2]) -> Result<(WeightVector, f64)> {
        if self.buffer.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let indices: Vec<usize> = self.buffer.entries().map(|e| e.index).collect();
        match self.cfg.calibrator {
            Method::Swc | Method::Aci => {
                let wv = WeightVector::from_unnormalized(t, indices.clone(), vec![1.0; indices.len()])?;
                Ok((wv.clone(), wv.n_eff))
            }
            Method::Twc => time_only_weights(t, &indices, self.cfg.lambda).map(|wv| {
                let n = wv.n_eff;
                (wv, n)
            }),
            Method::Rwc => {
                let zs: Vec<[f64; 2]> = self.buffer.entries().map(|e| e.z).collect();
                let wv = build_weights(t, &indices, &zs, z_t, self.cfg.lambda, self.cfg.h)?;
                // With K_h ≡ 1 there is no kernel to drop.
                let kernel_n_eff = wv.n_eff;
                if self.cfg.h.is_infinite() || self.cfg.n_min.is_none() {
                    return Ok((wv, kernel_n_eff));
                }
                let time_only = time_only_weights(t, &indices, self.cfg.lambda)?;
                Ok((apply_ess_safeguard(wv, time_only, self.cfg.n_min)?, kernel_n_eff))
            }
        }
    }

    /// Issues the bound for index `t` given the base forecast and embedding.
    pub fn issue(&mut self, t: usize, qhat: f64, z_t: [f64; 2]) -> Result<Issued> {
        if self.pending.is_some() {
            return Err(Error::InvalidConfig("previous bound has not been observed".into()));
        }
        if !qhat.is_finite() {
            return Err(Error::NonFinite(format!("base forecast at index {t}")));
        }
        if self.cfg.calibrator == Method::Rwc && z_t.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite(format!("regime embedding at index {t}")));
        }
        if let Some(last) = self.buffer.last_index() {
            if t <= last {
                return Err(Error::InvalidConfig(format!("index {t} does not follow {last}")));
            }
        }
        let (wv, n_eff_kernel) = self.weights(t, &z_t)?;
        let scores: Vec<f64> = self.buffer.entries().map(|e| e.score).collect();
        let alpha = self.aci.map_or(self.cfg.alpha, |a| a.alpha_t);
        let chat = conformal_threshold(
            &scores,
            &wv.normalized,
            alpha,
            self.cfg.finite_sample_correction,
            wv.total,
            TEST_POINT_WEIGHT,
        )?;
        let issued = Issued {
            index: t,
            qhat,
            chat,
            upper: qhat + chat,
            n_eff: wv.n_eff,
            tau: wv.tau,
            fallback_used: wv.fallback_used,
            alpha_t: self.aci.map(|a| a.alpha_t),
            n_eff_kernel,
        };
        self.pending = Some((issued, z_t));
        Ok(issued)
    }

    /// Observes the loss for the pending bound and updates the state.
    pub fn observe(&mut self, loss: f64) -> Result<Step> {
        if !loss.is_finite() {
            return Err(Error::NonFinite("observed loss".into()));
        }
        let (issued, z) = self.pending.take().ok_or(Error::NothingPending)?;
        let score = compute_score(loss, issued.qhat);
        let exceed = score > issued.chat;
        if let Some(aci) = self.aci.as_mut() {
            aci.update(exceed);
        }
        self.buffer.push(BufferEntry {
            index: issued.index,
            score,
            z,
        })?;
        Ok(Step {
            issued,
            loss,
            score,
            exceed,
        })
    }
}

/// One evaluation date of a calibrated (or base) bound series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundRecord {
    pub index: usize,
    pub date: NaiveDate,
    pub qhat: f64,
    pub chat: f64,
    pub upper: f64,
    pub loss: f64,
    pub exceed: bool,
    pub n_eff: f64,
    pub tau: f64,
    pub fallback_used: bool,
    pub alpha_t: Option<f64>,
    pub n_eff_kernel: f64,
}

impl BoundRecord {
    fn from_step(step: &Step, date: NaiveDate) -> Self {
        let i = step.issued;
        Self {
            index: i.index,
            date,
            qhat: i.qhat,
            chat: i.chat,
            upper: i.upper,
            loss: step.loss,
            exceed: step.exceed,
            n_eff: i.n_eff,
            tau: i.tau,
            fallback_used: i.fallback_used,
            alpha_t: i.alpha_t,
            n_eff_kernel: i.n_eff_kernel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundSeries {
    pub label: String,
    pub records: Vec<BoundRecord>,
}

impl BoundSeries {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn indicators(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.exceed).collect()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.records.iter().map(|r| r.date).collect()
    }
}

/// Runs the calibrator of `cfg` over `eval`, priming the buffer with up to
/// `m` scores from immediately before the range.
///
/// History starts at the first index with a forecast (and an embedding,
/// when one is given). If no history exists at the start of `eval`, the
/// first steps only fill the buffer and records begin once it is nonempty.
pub fn run_calibrator(
    losses: &LossSeries,
    forecasts: &ForecastSeries,
    embedding: Option<&RegimeEmbedding>,
    cfg: &RunConfig,
    eval: Range<usize>,
) -> Result<BoundSeries> {
    if cfg.calibrator == Method::Rwc && embedding.is_none() {
        return Err(Error::InvalidConfig("RWC requires a regime embedding".into()));
    }
    let n = losses.len();
    if forecasts.len() != n || embedding.is_some_and(|e| e.len() != n) {
        return Err(Error::DateMismatch("forecasts, embedding and losses differ in length".into()));
    }
    if eval.is_empty() || eval.end > n {
        return Err(Error::InvalidConfig(format!("evaluation range {eval:?} outside 0..{n}")));
    }
    let history_start = forecasts
        .valid_from()
        .max(embedding.map_or(0, RegimeEmbedding::valid_from));
    if eval.start < history_start {
        return Err(Error::InsufficientHistory {
            needed: history_start,
            got: eval.start,
        });
    }

    let y = losses.losses();
    let dates = losses.dates();
    let z_at = |t: usize| embedding.and_then(|e| e.z(t)).unwrap_or([f64::NAN; 2]);
    let q_at = |t: usize| {
        forecasts
            .get(t)
            .ok_or_else(|| Error::DateMismatch(format!("no base forecast for {}", dates[t])))
    };

    let mut cal = OnlineCalibrator::new(*cfg)?;
    for i in eval.start.saturating_sub(cfg.m).max(history_start)..eval.start {
        cal.prime(i, compute_score(y[i], q_at(i)?), z_at(i))?;
    }
    let mut records = Vec::with_capacity(eval.len());
    for t in eval {
        let qhat = q_at(t)?;
        if cal.buffer().is_empty() {
            cal.prime(t, compute_score(y[t], qhat), z_at(t))?;
            continue;
        }
        cal.issue(t, qhat, z_at(t))?;
        let step = cal.observe(y[t])?;
        records.push(BoundRecord::from_step(&step, dates[t]));
    }
    Ok(BoundSeries {
        label: cfg.calibrator.name().to_string(),
        records,
    })
}

/// Sliding-window conformal: uniform weights over the last `m` scores.
pub fn run_swc(
    losses: &LossSeries,
    forecasts: &ForecastSeries,
    cfg: &RunConfig,
    eval: Range<usize>,
) -> Result<BoundSeries> {
    let cfg = RunConfig {
        calibrator: Method::Swc,
        ..*cfg
    };
    run_calibrator(losses, forecasts, None, &cfg, eval)
}

/// Time-weighted conformal: recency weights only.
pub fn run_twc(
    losses: &LossSeries,
    forecasts: &ForecastSeries,
    cfg: &RunConfig,
    eval: Range<usize>,
) -> Result<BoundSeries> {
    let cfg = RunConfig {
        calibrator: Method::Twc,
        ..*cfg
    };
    run_calibrator(losses, forecasts, None, &cfg, eval)
}

/// Regime-weighted conformal with the ESS safeguard.
pub fn run_rwc(
    losses: &LossSeries,
    forecasts: &ForecastSeries,
    embedding: &RegimeEmbedding,
    cfg: &RunConfig,
    eval: Range<usize>,
) -> Result<BoundSeries> {
    let cfg = RunConfig {
        calibrator: Method::Rwc,
        ..*cfg
    };
    run_calibrator(losses, forecasts, Some(embedding), &cfg, eval)
}

/// Adaptive conformal inference over a sliding window of `m` scores; `α_t`
/// starts at `alpha` at the beginning of `eval`.
pub fn run_aci(
    losses: &LossSeries,
    forecasts: &ForecastSeries,
    cfg: &RunConfig,
    eval: Range<usize>,
) -> Result<BoundSeries> {
    let cfg = RunConfig {
        calibrator: Method::Aci,
        ..*cfg
    };
    run_calibrator(losses, forecasts, None, &cfg, eval)
}

/// The uncalibrated base forecaster as a bound series (`ĉ_t = 0`).
pub fn base_bounds(losses: &LossSeries, forecasts: &ForecastSeries, eval: Range<usize>) -> Result<BoundSeries> {
    let y = losses.losses();
    let dates = losses.dates();
    let records = eval
        .map(|t| {
            let qhat = forecasts
                .get(t)
                .ok_or_else(|| Error::DateMismatch(format!("no base forecast for {}", dates[t])))?;
            Ok(BoundRecord {
                index: t,
                date: dates[t],
                qhat,
                chat: 0.0,
                upper: qhat,
                loss: y[t],
                exceed: compute_score(y[t], qhat) > 0.0,
                n_eff: f64::NAN,
                tau: f64::NAN,
                fallback_used: false,
                alpha_t: None,
                n_eff_kernel: f64::NAN,
            })
        })
        .collect::<Result<_>>()?;
    Ok(BoundSeries {
        label: "base".into(),
        records,
    })
}

const BOUNDS_HEADER: [&str; 11] = [
    "date", "qhat", "chat", "U", "loss", "exceed", "n_eff", "tau", "fallback", "alpha_t", "n_eff_kernel",
];

fn fmt_opt(x: f64) -> String {
    if x.is_finite() {
        format!("{x:?}")
    } else {
        String::new()
    }
}

/// Writes `date,qhat,chat,U,loss,exceed,n_eff,tau,fallback,alpha_t,n_eff_kernel`
/// at full precision.
pub fn write_bounds_csv<W: Write>(writer: W, series: &BoundSeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(BOUNDS_HEADER)?;
    for r in &series.records {
        w.write_record([
            r.date.to_string(),
            format!("{:?}", r.qhat),
            format!("{:?}", r.chat),
            format!("{:?}", r.upper),
            format!("{:?}", r.loss),
            u8::from(r.exceed).to_string(),
            fmt_opt(r.n_eff),
            fmt_opt(r.tau),
            u8::from(r.fallback_used).to_string(),
            r.alpha_t.map(fmt_opt).unwrap_or_default(),
            fmt_opt(r.n_eff_kernel),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<bounds csv>", e))?;
    Ok(())
}

pub fn save_bounds_csv(path: impl AsRef<Path>, series: &BoundSeries) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_bounds_csv(std::io::BufWriter::new(file), series)
}

/// Reads a bounds CSV; `index` is the row position within the file.
pub fn read_bounds_csv<R: Read>(reader: R, label: &str) -> Result<BoundSeries> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols: Vec<usize> = BOUNDS_HEADER
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| Error::MissingColumn((*name).to_string()))
        })
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |k: usize| rec.get(cols[k]).unwrap_or("");
        let bad = |what: &str| Error::UnparseableRow {
            line,
            reason: format!("bad {what}"),
        };
        let num = |k: usize| -> Result<f64> {
            let s = field(k);
            if s.is_empty() {
                Ok(f64::NAN)
            } else {
                s.parse().map_err(|_| bad(BOUNDS_HEADER[k]))
            }
        };
        let flag = |k: usize| -> Result<bool> {
            match field(k) {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(bad(BOUNDS_HEADER[k])),
            }
        };
        let alpha_t = num(9)?;
        records.push(BoundRecord {
            index: row,
            date: NaiveDate::parse_from_str(field(0), "%Y-%m-%d").map_err(|_| bad("date"))?,
            qhat: num(1)?,
            chat: num(2)?,
            upper: num(3)?,
            loss: num(4)?,
            exceed: flag(5)?,
            n_eff: num(6)?,
            tau: num(7)?,
            fallback_used: flag(8)?,
            alpha_t: alpha_t.is_finite().then_some(alpha_t),
            n_eff_kernel: num(10)?,
        });
    }
    Ok(BoundSeries {
        label: label.to_string(),
        records,
    })
}
