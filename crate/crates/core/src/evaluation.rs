//! Backtest metrics for bound series: exceedance and tightness, rolling and
//! volatility-stratified calibration, and Kupiec / Christoffersen tests.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::calibrators::BoundSeries;
use crate::error::{Error, Result};

/// Trailing window of the rolling exceedance rate (one trading year).
pub const ROLLING_WINDOW: usize = 252;

pub fn exceedance_rate(indicators: &[bool]) -> Result<f64> {
    if indicators.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(indicators.iter().filter(|e| **e).count() as f64 / indicators.len() as f64)
}

/// Mean bound in basis points.
pub fn avg_var_bps(uppers: &[f64]) -> Result<f64> {
    if uppers.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(uppers.iter().sum::<f64>() / uppers.len() as f64 * 1e4)
}

/// Trailing full-window exceedance rates; element `k` covers indicators
/// `k..k + window`.
pub fn rolling_exceedance(indicators: &[bool], window: usize) -> Result<Vec<f64>> {
    if window == 0 || indicators.len() < window {
        return Err(Error::InsufficientLength {
            len: indicators.len(),
            needed: window.max(1),
        });
    }
    // Integer counts keep every step exactly ±1/window.
    let mut count = indicators[..window].iter().filter(|e| **e).count();
    let mut out = Vec::with_capacity(indicators.len() - window + 1);
    out.push(count as f64 / window as f64);
    for k in window..indicators.len() {
        count += usize::from(indicators[k]);
        count -= usize::from(indicators[k - window]);
        out.push(count as f64 / window as f64);
    }
    Ok(out)
}

/// Exceedance rate (%) per volatility quintile; empty buckets give NaN.
pub fn regime_stratified(indicators: &[bool], labels: &[u8]) -> Result<[f64; 5]> {
    if labels.len() != indicators.len() || labels.iter().any(|l| *l > 4) {
        return Err(Error::LabelMismatch {
            labels: labels.len(),
            n: indicators.len(),
        });
    }
    let (hits, counts) = bucket_counts(indicators, labels);
    Ok(std::array::from_fn(|k| 100.0 * hits[k] as f64 / counts[k] as f64))
}

fn bucket_counts(indicators: &[bool], labels: &[u8]) -> ([usize; 5], [usize; 5]) {
    let mut hits = [0usize; 5];
    let mut counts = [0usize; 5];
    for (&e, &l) in indicators.iter().zip(labels) {
        counts[l as usize] += 1;
        hits[l as usize] += usize::from(e);
    }
    (hits, counts)
}

/// `(Reg-MAE, Reg-MaxDev, Reg-Std)` in percentage points; the standard
/// deviation uses the population convention.
pub fn regime_stability(per_quintile_pct: &[f64; 5], target_pct: f64) -> (f64, f64, f64) {
    let dev = per_quintile_pct.map(|r| r - target_pct);
    let mae = dev.iter().map(|d| d.abs()).sum::<f64>() / 5.0;
    let max_dev = dev.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let mean = dev.iter().sum::<f64>() / 5.0;
    let std = (dev.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 5.0).sqrt();
    (mae, max_dev, std)
}

/// `a · ln(b)` with `0 · ln(·) = 0`.
fn xlogy(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * b.ln()
    }
}

/// Chi-square survival function for 1 or 2 degrees of freedom.
pub fn chi2_sf(x: f64, dof: u8) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    match dof {
        1 => erfc((x / 2.0).sqrt()),
        2 => (-x / 2.0).exp(),
        _ => panic!("chi2_sf supports 1 or 2 degrees of freedom, got {dof}"),
    }
}

/// Kupiec unconditional-coverage likelihood ratio and its p-value.
pub fn kupiec_uc(n: usize, x: usize, alpha: f64) -> Result<(f64, f64)> {
    if n == 0 || x > n {
        return Err(Error::InvalidCount { n, x });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let (nf, xf) = (n as f64, x as f64);
    let p = xf / nf;
    let lr = 2.0 * (xlogy(nf - xf, (1.0 - p) / (1.0 - alpha)) + xlogy(xf, p / alpha));
    // Clamp rounding noise around the exact-fit case.
    let lr = lr.max(0.0);
    Ok((lr, chi2_sf(lr, 1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Christoffersen {
    pub n00: usize,
    pub n01: usize,
    pub n10: usize,
    pub n11: usize,
    pub lr_uc: f64,
    pub lr_ind: f64,
    pub p_ind: f64,
    pub lr_cc: f64,
    pub p_cc: f64,
}

/// Christoffersen independence and conditional-coverage tests.
pub fn christoffersen(indicators: &[bool], alpha: f64) -> Result<Christoffersen> {
    if indicators.len() < 2 {
        return Err(Error::InsufficientLength {
            len: indicators.len(),
            needed: 2,
        });
    }
    let mut n = [[0usize; 2]; 2];
    for w in indicators.windows(2) {
        n[usize::from(w[0])][usize::from(w[1])] += 1;
    }
    let [[n00, n01], [n10, n11]] = n;
    let f = |v: usize| v as f64;
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { f(a) / f(b) };
    let pi01 = ratio(n01, n00 + n01);
    let pi11 = ratio(n11, n10 + n11);
    let pi = ratio(n01 + n11, n00 + n01 + n10 + n11);
    let ll_alt = xlogy(f(n00), 1.0 - pi01) + xlogy(f(n01), pi01) + xlogy(f(n10), 1.0 - pi11) + xlogy(f(n11), pi11);
    let ll_null = xlogy(f(n00 + n10), 1.0 - pi) + xlogy(f(n01 + n11), pi);
    let lr_ind = (2.0 * (ll_alt - ll_null)).max(0.0);
    let x = indicators.iter().filter(|e| **e).count();
    let (lr_uc, _) = kupiec_uc(indicators.len(), x, alpha)?;
    let lr_cc = lr_uc + lr_ind;
    Ok(Christoffersen {
        n00,
        n01,
        n10,
        n11,
        lr_uc,
        lr_ind,
        p_ind: chi2_sf(lr_ind, 1),
        lr_cc,
        p_cc: chi2_sf(lr_cc, 2),
    })
}

/// Three decimals, or two-digit scientific notation below 1e-3.
pub fn format_pvalue(p: f64) -> String {
    if p < 1e-3 {
        format!("{p:.2e}")
    } else {
        format!("{p:.3}")
    }
}

/// Percentile `q ∈ [0, 100]` by linear interpolation between order statistics.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightDiagnostics {
    pub median_n_eff: f64,
    pub p10_n_eff: f64,
    pub median_tau: f64,
    pub p90_tau: f64,
    pub fallback_count: usize,
    /// Same percentiles of n_eff before the ESS safeguard.
    pub median_n_eff_kernel: f64,
    pub p10_n_eff_kernel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingPoint {
    pub date: NaiveDate,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub method: String,
    pub alpha: f64,
    pub n: usize,
    pub exceed_count: usize,
    pub exceedance_pct: f64,
    pub avg_var_bps: f64,
    pub lr_uc: f64,
    pub p_uc: f64,
    pub lr_ind: f64,
    pub p_ind: f64,
    pub lr_cc: f64,
    pub p_cc: f64,
    pub quintile_n: [usize; 5],
    pub per_quintile_pct: [f64; 5],
    pub reg_mae_pp: f64,
    pub reg_maxdev_pp: f64,
    pub reg_std_pp: f64,
    pub rolling: Vec<RollingPoint>,
    pub weight_diag: Option<WeightDiagnostics>,
}

/// Builds the report for `series`; `labels` are the volatility quintiles of
/// its records, in order.
pub fn build_report(series: &BoundSeries, labels: &[u8], alpha: f64) -> Result<BacktestReport> {
    let ind = series.indicators();
    let uppers: Vec<f64> = series.records.iter().map(|r| r.upper).collect();
    let n = ind.len();
    let exceed_count = ind.iter().filter(|e| **e).count();
    let exceedance_pct = 100.0 * exceedance_rate(&ind)?;
    let (lr_uc, p_uc) = kupiec_uc(n, exceed_count, alpha)?;
    let cc = christoffersen(&ind, alpha)?;
    let per_quintile_pct = regime_stratified(&ind, labels)?;
    let (_, quintile_n) = bucket_counts(&ind, labels);
    let (reg_mae_pp, reg_maxdev_pp, reg_std_pp) = regime_stability(&per_quintile_pct, 100.0 * alpha);
    let rolling = if n >= ROLLING_WINDOW {
        rolling_exceedance(&ind, ROLLING_WINDOW)?
            .into_iter()
            .zip(&series.records[ROLLING_WINDOW - 1..])
            .map(|(rate, r)| RollingPoint { date: r.date, rate })
            .collect()
    } else {
        Vec::new()
    };
    let n_eff: Vec<f64> = series.records.iter().map(|r| r.n_eff).collect();
    let tau: Vec<f64> = series.records.iter().map(|r| r.tau).collect();
    let kernel: Vec<f64> = series.records.iter().map(|r| r.n_eff_kernel).collect();
    let weight_diag = n_eff.iter().any(|v| v.is_finite()).then(|| WeightDiagnostics {
        median_n_eff: percentile(&n_eff, 50.0),
        p10_n_eff: percentile(&n_eff, 10.0),
        median_tau: percentile(&tau, 50.0),
        p90_tau: percentile(&tau, 90.0),
        fallback_count: series.records.iter().filter(|r| r.fallback_used).count(),
        median_n_eff_kernel: percentile(&kernel, 50.0),
        p10_n_eff_kernel: percentile(&kernel, 10.0),
    });
    Ok(BacktestReport {
        method: series.label.clone(),
        alpha,
        n,
        exceed_count,
        exceedance_pct,
        avg_var_bps: avg_var_bps(&uppers)?,
        lr_uc,
        p_uc,
        lr_ind: cc.lr_ind,
        p_ind: cc.p_ind,
        lr_cc: cc.lr_cc,
        p_cc: cc.p_cc,
        quintile_n,
        per_quintile_pct,
        reg_mae_pp,
        reg_maxdev_pp,
        reg_std_pp,
        rolling,
        weight_diag,
    })
}

fn display_name(method: &str) -> String {
    match method {
        "base" => "Base".to_string(),
        other => other.to_ascii_uppercase(),
    }
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::Writer::from_writer(w)
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| Error::io("<table>", e))
}

/// `method,exceedance_pct,avg_var_bps`.
pub fn write_table1<W: Write>(out: W, reports: &[BacktestReport]) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["method", "exceedance_pct", "avg_var_bps"])?;
    for r in reports {
        w.write_record([
            display_name(&r.method),
            format!("{:.2}", r.exceedance_pct),
            format!("{:.0}", r.avg_var_bps),
        ])?;
    }
    finish(w)
}

/// `quintile,n,<method>...`; calibrated methods only.
pub fn write_table2<W: Write>(out: W, reports: &[BacktestReport]) -> Result<()> {
    let cols: Vec<&BacktestReport> = reports.iter().filter(|r| r.method != "base").collect();
    let mut w = csv_writer(out);
    let mut header = vec!["quintile".to_string(), "n".to_string()];
    header.extend(cols.iter().map(|r| display_name(&r.method)));
    w.write_record(&header)?;
    let n = cols.first().map_or([0; 5], |r| r.quintile_n);
    for k in 0..5 {
        let mut row = vec![k.to_string(), n[k].to_string()];
        row.extend(cols.iter().map(|r| format!("{:.2}", r.per_quintile_pct[k])));
        w.write_record(&row)?;
    }
    finish(w)
}

/// `method,reg_mae_pp,reg_maxdev_pp,reg_std_pp`; calibrated methods only.
pub fn write_table3<W: Write>(out: W, reports: &[BacktestReport]) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["method", "reg_mae_pp", "reg_maxdev_pp", "reg_std_pp"])?;
    for r in reports.iter().filter(|r| r.method != "base") {
        w.write_record([
            display_name(&r.method),
            format!("{:.2}", r.reg_mae_pp),
            format!("{:.2}", r.reg_maxdev_pp),
            format!("{:.2}", r.reg_std_pp),
        ])?;
    }
    finish(w)
}

/// Backtest table: exceedance, tightness, counts, LR statistics and p-values.
pub fn write_table5<W: Write>(out: W, reports: &[BacktestReport]) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record([
        "method", "exceedance_pct", "avg_var_bps", "n", "exc", "lr_uc", "p_uc", "lr_ind", "p_ind", "lr_cc", "p_cc",
    ])?;
    for r in reports {
        w.write_record([
            display_name(&r.method),
            format!("{:.2}", r.exceedance_pct),
            format!("{:.0}", r.avg_var_bps),
            r.n.to_string(),
            r.exceed_count.to_string(),
            format!("{:.2}", r.lr_uc),
            format_pvalue(r.p_uc),
            format!("{:.2}", r.lr_ind),
            format_pvalue(r.p_ind),
            format!("{:.2}", r.lr_cc),
            format_pvalue(r.p_cc),
        ])?;
    }
    finish(w)
}

/// Long-format rolling exceedance: `date,method,rate`.
pub fn write_rolling<W: Write>(out: W, reports: &[BacktestReport]) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["date", "method", "rate"])?;
    for r in reports {
        for p in &r.rolling {
            w.write_record([p.date.to_string(), r.method.clone(), format!("{:?}", p.rate)])?;
        }
    }
    finish(w)
}
