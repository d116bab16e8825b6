//! `rwc` command-line front end.

pub mod manifest;
pub mod pipeline;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::calibrators::{read_bounds_csv, save_bounds_csv, BoundSeries};
use crate::data::write_returns_csv;
use crate::error::{Error, Result};
use crate::evaluation::{write_rolling, write_table1, write_table2, write_table3, write_table5, BacktestReport};
use crate::synth::{simulate, RegimeModel};
use crate::tuning::write_candidates_csv;

pub use manifest::{Bandwidth, Experiment, ManifestArgs, SelectedParams};
pub use pipeline::{prepare, prepare_series, Prepared, SweepRow};

#[derive(Debug, Parser)]
#[command(name = "rwc", version, about = "Conformal calibration and backtesting of VaR forecasts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct ExperimentArgs {
    /// Manifest file (flat TOML); flags override its keys.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: ManifestArgs,
}

impl ExperimentArgs {
    pub fn resolve(self) -> Result<Experiment> {
        let file = match &self.config {
            Some(path) => ManifestArgs::load(path)?,
            None => ManifestArgs::default(),
        };
        Experiment::resolve(self.overrides.or(file))
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calibrate every method on the test segment and write bounds, reports and tables.
    Run(ExperimentArgs),
    /// Grid-search hyperparameters on the validation segment.
    Tune(ExperimentArgs),
    /// RWC over a list of bandwidths at fixed (m, lambda).
    SweepBandwidth(ExperimentArgs),
    /// Write a synthetic two-regime returns CSV.
    Simulate(SimulateArgs),
    /// Rebuild reports and tables from the bounds files of a finished run.
    Report(ReportArgs),
}

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 5000)]
    pub len: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.008)]
    pub calm_vol: f64,
    #[arg(long, default_value_t = 0.025)]
    pub stress_vol: f64,
    /// Probability of staying calm.
    #[arg(long, default_value_t = 0.98)]
    pub p_calm: f64,
    /// Probability of staying stressed.
    #[arg(long, default_value_t = 0.95)]
    pub p_stress: f64,
    /// Optional `date,state` CSV of the hidden regime path.
    #[arg(long)]
    pub regimes_out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ReportArgs {
    /// Output directory of a previous `run`.
    #[arg(long)]
    pub dir: PathBuf,
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => cmd_run(&a.resolve()?),
        Command::Tune(a) => cmd_tune(&a.resolve()?),
        Command::SweepBandwidth(a) => cmd_sweep_bandwidth(&a.resolve()?),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Report(a) => cmd_report(&a.dir),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_tables(exp: &Experiment, dir: &Path, reports: &[BacktestReport]) -> Result<()> {
    for r in reports {
        write_json(&dir.join(format!("report_{}.json", r.method)), r)?;
    }
    write_table1(create(&dir.join("table1.csv"))?, reports)?;
    write_table2(create(&dir.join("table2.csv"))?, reports)?;
    write_table3(create(&dir.join("table3.csv"))?, reports)?;
    write_table5(create(&dir.join("table5.csv"))?, reports)?;
    write_rolling(create(&dir.join(format!("rolling_{}.csv", exp.base.name())))?, reports)
}

pub fn cmd_run(exp: &Experiment) -> Result<()> {
    let prep = prepare(exp, |s| s.test.clone())?;
    log::info!(
        "{} observations; test segment {} days from {}",
        prep.returns.len(),
        prep.splits.test_len(),
        prep.returns.dates()[prep.splits.test.start]
    );
    let series = pipeline::run_all(exp, &prep)?;
    let reports = pipeline::reports(exp, &prep, &series)?;
    let dir = &exp.output;
    ensure_dir(dir)?;
    for s in &series {
        save_bounds_csv(dir.join(format!("bounds_{}.csv", s.label)), s)?;
    }
    write_tables(exp, dir, &reports)?;
    write_json(&dir.join("manifest.lock.json"), exp)?;
    for r in &reports {
        log::info!("{}: exceedance {:.2}%, avg VaR {:.0} bps", r.method, r.exceedance_pct, r.avg_var_bps);
    }
    Ok(())
}

pub fn cmd_tune(exp: &Experiment) -> Result<()> {
    let prep = prepare(exp, |s| s.val.clone())?;
    let results = pipeline::tune_all(exp, &prep)?;
    ensure_dir(&exp.output)?;
    for res in &results {
        let name = res.method.name();
        write_candidates_csv(create(&exp.output.join(format!("tune_{name}.csv")))?, res)?;
        let sel = SelectedParams {
            method: res.method,
            params: res.selected,
            objective: res.selected_objective,
        };
        write_json(&exp.output.join(format!("selected_{name}.json")), &sel)?;
        log::info!("{name}: selected {:?} (objective {:.5})", res.selected, res.selected_objective);
    }
    Ok(())
}

pub fn cmd_sweep_bandwidth(exp: &Experiment) -> Result<()> {
    let prep = prepare(exp, |s| s.test.clone())?;
    let rows = pipeline::sweep_bandwidth(exp, &prep)?;
    ensure_dir(&exp.output)?;
    let base = exp.base.name();
    let mut w = csv::Writer::from_writer(create(&exp.output.join(format!("sweep_{base}.csv")))?);
    w.write_record([
        "setting",
        "exceedance_pct",
        "avg_var_bps",
        "top_vol_exceedance_pct",
        "median_n_eff",
        "p10_n_eff",
        "fallback_count",
    ])?;
    for (r, _) in &rows {
        let setting = if r.h.is_infinite() {
            "h = inf (TWC limit)".to_string()
        } else {
            format!("h = {}", r.h)
        };
        w.write_record([
            setting,
            format!("{:.2}", r.exceedance_pct),
            format!("{:.0}", r.avg_var_bps),
            format!("{:.2}", r.top_vol_exceedance_pct),
            format!("{:.1}", r.median_n_eff),
            format!("{:.1}", r.p10_n_eff),
            r.fallback_count.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&exp.output, e))?;
    let full: Vec<&SweepRow> = rows.iter().map(|(r, _)| r).collect();
    write_json(&exp.output.join(format!("sweep_{base}.json")), &full)
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let mut model = RegimeModel::calm_stress(a.len, a.seed);
    model.states[0].vol = a.calm_vol;
    model.states[1].vol = a.stress_vol;
    model.transition = vec![vec![a.p_calm, 1.0 - a.p_calm], vec![1.0 - a.p_stress, a.p_stress]];
    model
        .validate()
        .map_err(|e| Error::InvalidConfig(format!("simulation model: {e}")))?;
    let (rs, path) = simulate(&model)?;
    write_returns_csv(&a.out, &rs)?;
    if let Some(p) = &a.regimes_out {
        let mut w = csv::Writer::from_writer(create(p)?);
        w.write_record(["date", "state"])?;
        for (d, s) in rs.dates().iter().zip(&path) {
            w.write_record([d.to_string(), s.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

pub fn cmd_report(dir: &Path) -> Result<()> {
    let lock = dir.join("manifest.lock.json");
    let text = std::fs::read_to_string(&lock).map_err(|e| Error::io(&lock, e))?;
    let exp: Experiment = serde_json::from_str(&text)?;
    let prep = prepare(&exp, |s| s.test.clone())?;
    let labels = ["base"].into_iter().chain(exp.methods.iter().map(|m| m.name()));
    let series: Vec<BoundSeries> = labels
        .map(|label| {
            let path = dir.join(format!("bounds_{label}.csv"));
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            read_bounds_csv(file, label)
        })
        .collect::<Result<_>>()?;
    let reports = pipeline::reports(&exp, &prep, &series)?;
    write_tables(&exp, dir, &reports)
}
