//! Return/loss series, CSV ingest, chronological splits and run configuration.

use std::collections::HashMap;
use std::fmt;
use std::io::Read;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Segment};

fn check_dates(dates: &[NaiveDate]) -> Result<()> {
    for pair in dates.windows(2) {
        if pair[1] == pair[0] {
            return Err(Error::DuplicateDate(pair[1]));
        }
        if pair[1] < pair[0] {
            return Err(Error::InvalidConfig(format!(
                "dates must be strictly increasing ({} follows {})",
                pair[1], pair[0]
            )));
        }
    }
    Ok(())
}

/// Dated daily returns, fraction per day.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    dates: Vec<NaiveDate>,
    returns: Vec<f64>,
}

impl ReturnSeries {
    pub fn new(dates: Vec<NaiveDate>, returns: Vec<f64>) -> Result<Self> {
        if dates.is_empty() {
            return Err(Error::EmptyFile);
        }
        if dates.len() != returns.len() {
            return Err(Error::InvalidConfig(format!(
                "{} dates but {} returns",
                dates.len(),
                returns.len()
            )));
        }
        check_dates(&dates)?;
        if let Some(pos) = returns.iter().position(|r| !r.is_finite()) {
            return Err(Error::NonFinite(format!("return on {}", dates[pos])));
        }
        Ok(Self { dates, returns })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    /// Prefix of the first `len` observations.
    pub fn truncated(&self, len: usize) -> Result<Self> {
        let len = len.min(self.len());
        Self::new(self.dates[..len].to_vec(), self.returns[..len].to_vec())
    }
}

/// Dated portfolio losses `y_t = -r_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSeries {
    dates: Vec<NaiveDate>,
    losses: Vec<f64>,
}

impl LossSeries {
    pub fn new(dates: Vec<NaiveDate>, losses: Vec<f64>) -> Result<Self> {
        // Same invariants as returns; reuse the validation.
        let rs = ReturnSeries::new(dates, losses)?;
        Ok(Self {
            dates: rs.dates,
            losses: rs.returns,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    /// Reinterpret the losses as returns by negating them again.
    pub fn to_returns(&self) -> ReturnSeries {
        ReturnSeries {
            dates: self.dates.clone(),
            returns: self.losses.iter().map(|y| -y).collect(),
        }
    }
}

pub fn to_losses(rs: &ReturnSeries) -> LossSeries {
    LossSeries {
        dates: rs.dates.clone(),
        losses: rs.returns.iter().map(|r| -r).collect(),
    }
}

/// Load a returns CSV with a header row. Rows may appear in any order; the
/// result is sorted by date.
pub fn load_returns_csv(
    path: impl AsRef<Path>,
    date_column: &str,
    return_column: &str,
) -> Result<ReturnSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_returns_csv(file, date_column, return_column)
}

pub fn read_returns_csv<R: Read>(
    reader: R,
    date_column: &str,
    return_column: &str,
) -> Result<ReturnSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let date_idx = find(date_column)?;
    let ret_idx = find(return_column)?;

    let mut rows: Vec<(NaiveDate, f64)> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |reason: String| Error::UnparseableRow { line, reason };
        let date_raw = record.get(date_idx).unwrap_or("");
        let ret_raw = record.get(ret_idx).unwrap_or("");
        let date = NaiveDate::parse_from_str(date_raw, "%Y-%m-%d")
            .map_err(|e| bad(format!("date `{date_raw}`: {e}")))?;
        let ret: f64 = ret_raw
            .parse()
            .map_err(|_| bad(format!("return `{ret_raw}` is not a decimal")))?;
        if !ret.is_finite() {
            return Err(bad(format!("return `{ret_raw}` is not finite")));
        }
        rows.push((date, ret));
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile);
    }
    rows.sort_by_key(|(d, _)| *d);
    let (dates, returns): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    ReturnSeries::new(dates, returns)
}

pub fn write_returns_csv(path: impl AsRef<Path>, rs: &ReturnSeries) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["date", "ret"])?;
    for (d, r) in rs.dates.iter().zip(&rs.returns) {
        w.write_record([d.to_string(), format!("{r:?}")])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Inclusive segment end dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_end: NaiveDate,
    pub val_end: NaiveDate,
}

/// Half-open index ranges of the three chronological segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitRanges {
    /// Everything before the test segment.
    pub fn pretest(&self) -> Range<usize> {
        self.train.start..self.val.end
    }

    pub fn test_len(&self) -> usize {
        self.test.len()
    }
}

pub fn split(dates: &[NaiveDate], cfg: &SplitConfig) -> Result<SplitRanges> {
    if cfg.train_end >= cfg.val_end {
        return Err(Error::InvalidConfig(format!(
            "train_end {} must precede val_end {}",
            cfg.train_end, cfg.val_end
        )));
    }
    let train_end = dates.partition_point(|d| *d <= cfg.train_end);
    let val_end = dates.partition_point(|d| *d <= cfg.val_end);
    let ranges = SplitRanges {
        train: 0..train_end,
        val: train_end..val_end,
        test: val_end..dates.len(),
    };
    if ranges.train.is_empty() {
        return Err(Error::EmptySegment(Segment::Train));
    }
    if ranges.val.is_empty() {
        return Err(Error::EmptySegment(Segment::Validation));
    }
    if ranges.test.is_empty() {
        return Err(Error::EmptySegment(Segment::Test));
    }
    Ok(ranges)
}

/// Calibration method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Swc,
    Twc,
    Rwc,
    Aci,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Swc, Method::Aci, Method::Twc, Method::Rwc];

    pub fn name(self) -> &'static str {
        match self {
            Method::Swc => "swc",
            Method::Twc => "twc",
            Method::Rwc => "rwc",
            Method::Aci => "aci",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "swc" => Ok(Method::Swc),
            "twc" => Ok(Method::Twc),
            "rwc" => Ok(Method::Rwc),
            "aci" => Ok(Method::Aci),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

/// Base forecaster selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseKind {
    Hs,
    Gbdt,
    External,
}

impl BaseKind {
    pub fn name(self) -> &'static str {
        match self {
            BaseKind::Hs => "hs",
            BaseKind::Gbdt => "gbdt",
            BaseKind::External => "external",
        }
    }
}

impl FromStr for BaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hs" => Ok(BaseKind::Hs),
            "gbdt" => Ok(BaseKind::Gbdt),
            "external" => Ok(BaseKind::External),
            other => Err(Error::InvalidConfig(format!("unknown base `{other}`"))),
        }
    }
}

/// Parameters of one calibrator run. `h = f64::INFINITY` means `K_h ≡ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub alpha: f64,
    pub m: usize,
    pub lambda: f64,
    #[serde(with = "bandwidth_serde")]
    pub h: f64,
    pub n_min: Option<usize>,
    pub finite_sample_correction: bool,
    pub aci_gamma: f64,
    pub aci_clip: (f64, f64),
    pub base: BaseKind,
    pub calibrator: Method,
    pub rng_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            m: 252,
            lambda: 0.0,
            h: f64::INFINITY,
            n_min: None,
            finite_sample_correction: false,
            aci_gamma: 0.005,
            aci_clip: (1e-4, 0.2),
            base: BaseKind::Hs,
            calibrator: Method::Swc,
            rng_seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0,1), got {}", self.alpha));
        }
        if self.m == 0 {
            return bad("m must be positive".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.h > 0.0) {
            return bad(format!("h must be > 0 or infinite, got {}", self.h));
        }
        if self.n_min == Some(0) {
            return bad("n_min must be a positive integer".into());
        }
        if !(self.aci_gamma >= 0.0 && self.aci_gamma.is_finite()) {
            return bad(format!("aci_gamma must be >= 0, got {}", self.aci_gamma));
        }
        let (lo, hi) = self.aci_clip;
        if !(lo > 0.0 && lo <= self.alpha && self.alpha <= hi && hi < 1.0) {
            return bad(format!(
                "aci clip [{lo}, {hi}] must satisfy 0 < alpha_min <= alpha <= alpha_max < 1"
            ));
        }
        Ok(())
    }
}

/// Serializes an infinite bandwidth as the string `"inf"`.
pub mod bandwidth_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(h: &f64, s: S) -> Result<S::Ok, S::Error> {
        if h.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*h)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) => super::parse_bandwidth(&t).map_err(serde::de::Error::custom),
        }
    }
}

/// Parses a bandwidth, accepting `inf`/`infinity`/`∞`.
pub fn parse_bandwidth(s: &str) -> Result<f64> {
    let t = s.trim().to_ascii_lowercase();
    if matches!(t.as_str(), "inf" | "infinity" | "∞") {
        return Ok(f64::INFINITY);
    }
    t.parse::<f64>()
        .ok()
        .filter(|h| *h > 0.0)
        .ok_or_else(|| Error::InvalidConfig(format!("bad bandwidth `{s}`")))
}

/// Index of each date, for aligning auxiliary files.
pub(crate) fn date_index(dates: &[NaiveDate]) -> HashMap<NaiveDate, usize> {
    dates.iter().enumerate().map(|(i, d)| (*d, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn single_row_parses() {
        let rs = read_returns_csv("date,ret\n2020-01-02,0.013\n".as_bytes(), "date", "ret").unwrap();
        assert_eq!(rs.len(), 1);
        assert_eq!(rs.returns()[0], 0.013);
        assert_eq!(rs.dates()[0], d("2020-01-02"));
    }

    #[test]
    fn out_of_order_rows_are_sorted() {
        let sorted = "date,ret\n2020-01-02,0.01\n2020-01-03,-0.02\n2020-01-06,0.005\n";
        let shuffled = "date,ret\n2020-01-06,0.005\n2020-01-02,0.01\n2020-01-03,-0.02\n";
        let a = read_returns_csv(sorted.as_bytes(), "date", "ret").unwrap();
        let b = read_returns_csv(shuffled.as_bytes(), "date", "ret").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_date_rejected() {
        let csv = "date,ret\n2020-01-02,0.01\n2020-01-02,0.02\n";
        let err = read_returns_csv(csv.as_bytes(), "date", "ret").unwrap_err();
        assert!(matches!(err, Error::DuplicateDate(x) if x == d("2020-01-02")));
    }

    #[test]
    fn missing_column_and_bad_rows() {
        let err = read_returns_csv("date,r\n2020-01-02,0.01\n".as_bytes(), "date", "ret").unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "ret"));

        let err = read_returns_csv("date,ret\n2020-01-02,abc\n".as_bytes(), "date", "ret").unwrap_err();
        assert!(matches!(err, Error::UnparseableRow { line: 2, .. }));

        let err = read_returns_csv("date,ret\n2020-01-02,NaN\n".as_bytes(), "date", "ret").unwrap_err();
        assert!(matches!(err, Error::UnparseableRow { .. }));

        let err = read_returns_csv("date,ret\n".as_bytes(), "date", "ret").unwrap_err();
        assert!(matches!(err, Error::EmptyFile));
    }

    #[test]
    fn full_precision_kept() {
        let rs = read_returns_csv(
            "date,ret\n2020-01-02,0.0123456789012345678\n".as_bytes(),
            "date",
            "ret",
        )
        .unwrap();
        assert_eq!(rs.returns()[0], 0.0123456789012345678_f64);
    }

    #[test]
    fn losses_are_negated_returns() {
        let rs = ReturnSeries::new(vec![d("2020-01-02"), d("2020-01-03")], vec![0.01, -0.02]).unwrap();
        let ls = to_losses(&rs);
        assert_eq!(ls.losses(), &[-0.01, 0.02]);
        assert_eq!(ls.dates(), rs.dates());
        assert_eq!(ls.to_returns(), rs);

        let zero = ReturnSeries::new(vec![d("2020-01-02")], vec![0.0]).unwrap();
        assert_eq!(to_losses(&zero).losses(), &[0.0]);
    }

    #[test]
    fn minimal_split() {
        let dates = vec![d("2020-01-01"), d("2020-01-02"), d("2020-01-03")];
        let s = split(
            &dates,
            &SplitConfig {
                train_end: dates[0],
                val_end: dates[1],
            },
        )
        .unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (1, 1, 1));
    }

    #[test]
    fn degenerate_split() {
        let dates = vec![d("2020-01-01"), d("2020-01-02"), d("2020-01-03")];
        let err = split(
            &dates,
            &SplitConfig {
                train_end: dates[1],
                val_end: dates[2],
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptySegment(Segment::Test)));
    }

    #[test]
    fn run_config_validation() {
        let mut cfg = RunConfig::default();
        cfg.validate().unwrap();
        cfg.alpha = 1.0;
        assert!(cfg.validate().is_err());
        cfg.alpha = 0.5;
        assert!(cfg.validate().is_err(), "alpha above alpha_max");
        let cfg = RunConfig {
            h: 0.0,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn bandwidth_parsing() {
        assert!(parse_bandwidth("inf").unwrap().is_infinite());
        assert_eq!(parse_bandwidth("0.5").unwrap(), 0.5);
        assert!(parse_bandwidth("-1").is_err());
    }
}
