use std::io::Read;
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;

use super::ForecastSeries;
use crate::data::date_index;
use crate::error::{Error, Result};

/// Aligns a `date,qhat` CSV of precomputed forecasts onto the loss dates.
///
/// Every date in `eval` must be covered. Earlier forecasts are kept only as
/// far back as they are contiguous with the evaluation range (they prime the
/// calibration buffer); anything else is ignored.
pub fn load_external_forecasts(
    path: impl AsRef<Path>,
    dates: &[NaiveDate],
    eval: Range<usize>,
) -> Result<ForecastSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_external_forecasts(file, dates, eval)
}

pub(crate) fn read_external_forecasts<R: Read>(
    reader: R,
    dates: &[NaiveDate],
    eval: Range<usize>,
) -> Result<ForecastSeries> {
    if eval.is_empty() || eval.end > dates.len() {
        return Err(Error::InvalidConfig(format!(
            "evaluation range {eval:?} does not fit {} dates",
            dates.len()
        )));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (date_idx, q_idx) = (col("date")?, col("qhat")?);

    let lookup = date_index(dates);
    let mut qhat = vec![f64::NAN; dates.len()];
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let raw_date = record.get(date_idx).unwrap_or("");
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d").map_err(|e| Error::UnparseableRow {
            line,
            reason: format!("date `{raw_date}`: {e}"),
        })?;
        let raw_q = record.get(q_idx).unwrap_or("");
        let q: f64 = raw_q
            .parse()
            .ok()
            .filter(|q: &f64| q.is_finite())
            .ok_or_else(|| Error::UnparseableRow {
                line,
                reason: format!("qhat `{raw_q}` is not a finite decimal"),
            })?;
        if let Some(&t) = lookup.get(&date) {
            qhat[t] = q;
        }
    }

    if let Some(t) = eval.clone().find(|&t| qhat[t].is_nan()) {
        return Err(Error::DateMismatch(format!("no forecast for {}", dates[t])));
    }
    let mut valid_from = eval.start;
    while valid_from > 0 && !qhat[valid_from - 1].is_nan() {
        valid_from -= 1;
    }
    qhat[eval.end..].iter_mut().for_each(|q| *q = f64::NAN);
    Ok(ForecastSeries {
        dates: dates.to_vec(),
        qhat,
        valid_from,
        degenerate_fits: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synthetic_dates;

    fn csv_for(dates: &[NaiveDate], idx: impl Iterator<Item = usize>) -> String {
        let mut s = String::from("date,qhat\n");
        for t in idx {
            s.push_str(&format!("{},{}\n", dates[t], 0.01 + t as f64 * 1e-4));
        }
        s
    }

    #[test]
    fn exact_range_accepted() {
        let dates = synthetic_dates(20);
        let f = read_external_forecasts(csv_for(&dates, 10..15).as_bytes(), &dates, 10..15).unwrap();
        assert_eq!(f.valid_from(), 10);
        assert_eq!(f.get(12), Some(0.01 + 12.0 * 1e-4));
        assert_eq!(f.get(15), None);
    }

    #[test]
    fn missing_date_rejected() {
        let dates = synthetic_dates(20);
        let file = csv_for(&dates, (10..15).filter(|t| *t != 13));
        let err = read_external_forecasts(file.as_bytes(), &dates, 10..15).unwrap_err();
        assert!(matches!(err, Error::DateMismatch(_)));
    }

    #[test]
    fn earlier_dates_extend_history() {
        let dates = synthetic_dates(20);
        let file = csv_for(&dates, (2..15).filter(|t| *t != 4));
        let f = read_external_forecasts(file.as_bytes(), &dates, 10..15).unwrap();
        assert_eq!(f.valid_from(), 5);
        assert_eq!(f.len(), 20);
    }

    #[test]
    fn missing_column() {
        let dates = synthetic_dates(5);
        let err = read_external_forecasts("date,q\n".as_bytes(), &dates, 0..5).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "qhat"));
    }
}
