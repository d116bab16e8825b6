//! Experiment manifest: a flat TOML document whose keys double as CLI flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use clap::Args;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::{parse_bandwidth, BaseKind, Method, RunConfig, SplitConfig};
use crate::error::{Error, Result};
use crate::forecasters::GbdtParams;
use crate::regime::StandardizeOn;
use crate::tuning::{Candidate, GridSpec};

/// Kernel bandwidth that parses `inf` as `∞` in both TOML and flags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth(pub f64);

impl FromStr for Bandwidth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_bandwidth(s).map(Bandwidth)
    }
}

impl Serialize for Bandwidth {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        crate::data::bandwidth_serde::serialize(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        crate::data::bandwidth_serde::deserialize(d).map(Bandwidth)
    }
}

/// Accepts both a native TOML date (`2011-01-31`) and a quoted string.
fn toml_date<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<NaiveDate>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Text(String),
        Native(toml::value::Datetime),
    }
    let text = match Repr::deserialize(d)? {
        Repr::Text(s) => s,
        Repr::Native(dt) => match (dt.date, dt.time) {
            (Some(date), None) => date.to_string(),
            _ => return Err(serde::de::Error::custom(format!("expected a date without time, got {dt}"))),
        },
    };
    NaiveDate::from_str(text.trim())
        .map(Some)
        .map_err(|e| serde::de::Error::custom(format!("invalid date `{text}`: {e}")))
}

macro_rules! manifest_args {
    ($( $(#[$meta:meta])* $field:ident : $ty:ty ),* $(,)?) => {
        /// Every manifest key; unset keys fall back to the manifest file and
        /// then to built-in defaults.
        #[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct ManifestArgs {
            $( $(#[$meta])* #[arg(long)] pub $field: Option<$ty>, )*
        }

        impl ManifestArgs {
            /// Keys set in `self` win over `other`.
            pub fn or(self, other: ManifestArgs) -> ManifestArgs {
                ManifestArgs { $( $field: self.$field.or(other.$field), )* }
            }
        }
    };
}

manifest_args! {
    /// Returns CSV.
    data: PathBuf,
    date_col: String,
    return_col: String,
    /// Last training date (inclusive).
    #[serde(default, deserialize_with = "toml_date")]
    train_end: NaiveDate,
    /// Last validation date (inclusive).
    #[serde(default, deserialize_with = "toml_date")]
    val_end: NaiveDate,
    alpha: f64,
    #[arg(value_delimiter = ',')]
    methods: Vec<Method>,
    base: BaseKind,
    hs_window: usize,
    /// `date,qhat` CSV for `--base external`.
    forecasts_file: PathBuf,
    gbdt_window: usize,
    gbdt_refit_every: usize,
    gbdt_rounds: usize,
    gbdt_max_depth: usize,
    gbdt_learning_rate: f64,
    gbdt_subsample: f64,
    gbdt_min_samples_leaf: usize,
    swc_m: usize,
    twc_m: usize,
    twc_lambda: f64,
    rwc_m: usize,
    rwc_lambda: f64,
    rwc_h: Bandwidth,
    rwc_n_min: usize,
    aci_m: usize,
    aci_gamma: f64,
    aci_clip_min: f64,
    aci_clip_max: f64,
    finite_sample_correction: bool,
    /// Directory with `selected_<method>.json` files from `tune`.
    tuned: PathBuf,
    standardize_on: StandardizeOn,
    output: PathBuf,
    seed: u64,
    #[arg(value_delimiter = ',')]
    m_grid: Vec<usize>,
    #[arg(value_delimiter = ',')]
    lambda_grid: Vec<f64>,
    #[arg(value_delimiter = ',')]
    h_grid: Vec<Bandwidth>,
    #[arg(value_delimiter = ',')]
    gamma_grid: Vec<f64>,
    /// Bandwidths for `sweep-bandwidth`.
    #[arg(value_delimiter = ',')]
    h_list: Vec<Bandwidth>,
}

impl ManifestArgs {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("manifest: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtSettings {
    pub window: usize,
    pub refit_every: usize,
    pub params: GbdtParams,
}

/// Selected hyperparameters written by `tune` and read back through `tuned`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectedParams {
    pub method: Method,
    #[serde(flatten)]
    pub params: Candidate,
    pub objective: f64,
}

/// Fully resolved experiment; serialized as `manifest.lock.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub data: PathBuf,
    pub date_col: String,
    pub return_col: String,
    pub split: SplitConfig,
    pub alpha: f64,
    pub methods: Vec<Method>,
    pub base: BaseKind,
    pub hs_window: usize,
    pub forecasts_file: Option<PathBuf>,
    pub gbdt: GbdtSettings,
    pub params: BTreeMap<Method, RunConfig>,
    pub standardize_on: StandardizeOn,
    pub output: PathBuf,
    pub seed: u64,
    pub grid: GridSpec,
    pub h_list: Vec<Bandwidth>,
}

/// Selected validation hyperparameters per base (`m, λ, h, γ, n_min`).
fn default_params(base: BaseKind, method: Method) -> (usize, f64, f64, f64, Option<usize>) {
    let inf = f64::INFINITY;
    let gbdt_like = base != BaseKind::Hs;
    match (method, gbdt_like) {
        (Method::Swc, _) => (252, 0.0, inf, 0.0, None),
        (Method::Twc, true) => (756, 0.005, inf, 0.0, None),
        (Method::Twc, false) => (756, 0.01, inf, 0.0, None),
        (Method::Rwc, true) => (756, 0.005, 1.0, 0.0, Some(100)),
        (Method::Rwc, false) => (756, 0.01, 2.0, 0.0, Some(30)),
        (Method::Aci, true) => (252, 0.0, inf, 0.005, None),
        (Method::Aci, false) => (252, 0.0, inf, 0.002, None),
    }
}

impl Experiment {
    pub fn resolve(args: ManifestArgs) -> Result<Self> {
        let missing = |k: &str| Error::InvalidConfig(format!("missing required key `{k}`"));
        let data = args.data.ok_or_else(|| missing("data"))?;
        let split = SplitConfig {
            train_end: args.train_end.ok_or_else(|| missing("train_end"))?,
            val_end: args.val_end.ok_or_else(|| missing("val_end"))?,
        };
        let alpha = args.alpha.unwrap_or(0.01);
        let methods = args.methods.unwrap_or_else(|| Method::ALL.to_vec());
        if methods.is_empty() {
            return Err(Error::InvalidConfig("methods must be nonempty".into()));
        }
        let base = args.base.unwrap_or(BaseKind::Hs);
        if base == BaseKind::External && args.forecasts_file.is_none() {
            return Err(missing("forecasts_file"));
        }
        let seed = args.seed.unwrap_or(0);
        let gbdt_defaults = GbdtParams::default();
        let gbdt = GbdtSettings {
            window: args.gbdt_window.unwrap_or(1008),
            refit_every: args.gbdt_refit_every.unwrap_or(21),
            params: GbdtParams {
                rounds: args.gbdt_rounds.unwrap_or(gbdt_defaults.rounds),
                max_depth: args.gbdt_max_depth.unwrap_or(gbdt_defaults.max_depth),
                learning_rate: args.gbdt_learning_rate.unwrap_or(gbdt_defaults.learning_rate),
                subsample: args.gbdt_subsample.unwrap_or(gbdt_defaults.subsample),
                min_samples_leaf: args.gbdt_min_samples_leaf.unwrap_or(gbdt_defaults.min_samples_leaf),
                seed,
            },
        };
        gbdt.params.validate()?;

        let mut params = BTreeMap::new();
        for &method in &methods {
            let (mut m, mut lambda, mut h, mut gamma, mut n_min) = default_params(base, method);
            if let Some(dir) = &args.tuned {
                let path = dir.join(format!("selected_{}.json", method.name()));
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let sel: SelectedParams = serde_json::from_str(&text)?;
                if sel.method != method {
                    return Err(Error::InvalidConfig(format!("{} holds {} parameters", path.display(), sel.method)));
                }
                (m, lambda, h, gamma) = (sel.params.m, sel.params.lambda, sel.params.h, sel.params.gamma);
            }
            match method {
                Method::Swc => m = args.swc_m.unwrap_or(m),
                Method::Twc => {
                    m = args.twc_m.unwrap_or(m);
                    lambda = args.twc_lambda.unwrap_or(lambda);
                }
                Method::Rwc => {
                    m = args.rwc_m.unwrap_or(m);
                    lambda = args.rwc_lambda.unwrap_or(lambda);
                    h = args.rwc_h.map_or(h, |b| b.0);
                    n_min = args.rwc_n_min.map_or(n_min, Some);
                }
                Method::Aci => {
                    m = args.aci_m.unwrap_or(m);
                    gamma = args.aci_gamma.unwrap_or(gamma);
                }
            }
            let cfg = RunConfig {
                alpha,
                m,
                lambda,
                h,
                n_min,
                finite_sample_correction: args.finite_sample_correction.unwrap_or(false),
                aci_gamma: gamma,
                aci_clip: (args.aci_clip_min.unwrap_or(1e-4), args.aci_clip_max.unwrap_or(0.2)),
                base,
                calibrator: method,
                rng_seed: seed,
            };
            cfg.validate()?;
            params.insert(method, cfg);
        }

        let default_grid = GridSpec::default();
        let grid = GridSpec {
            m_grid: args.m_grid.unwrap_or(default_grid.m_grid),
            lambda_grid: args.lambda_grid.unwrap_or(default_grid.lambda_grid),
            h_grid: args
                .h_grid
                .map_or(default_grid.h_grid, |v| v.into_iter().map(|b| b.0).collect()),
            gamma_grid: args.gamma_grid.unwrap_or(default_grid.gamma_grid),
            aci_m: args.aci_m.unwrap_or(default_grid.aci_m),
        };
        let h_list = args.h_list.unwrap_or_else(|| {
            [f64::INFINITY, 2.0, 1.0, 0.5].into_iter().map(Bandwidth).collect()
        });

        Ok(Self {
            data,
            date_col: args.date_col.unwrap_or_else(|| "date".into()),
            return_col: args.return_col.unwrap_or_else(|| "ret".into()),
            split,
            alpha,
            methods,
            base,
            hs_window: args.hs_window.unwrap_or(252),
            forecasts_file: args.forecasts_file,
            gbdt,
            params,
            standardize_on: args.standardize_on.unwrap_or_default(),
            output: args.output.unwrap_or_else(|| "out".into()),
            seed,
            grid,
            h_list,
        })
    }

    /// Configuration of `method`; methods outside the manifest get defaults.
    pub fn config(&self, method: Method) -> RunConfig {
        self.params.get(&method).copied().unwrap_or_else(|| {
            let (m, lambda, h, aci_gamma, n_min) = default_params(self.base, method);
            RunConfig {
                alpha: self.alpha,
                m,
                lambda,
                h,
                n_min,
                aci_gamma,
                base: self.base,
                calibrator: method,
                rng_seed: self.seed,
                ..RunConfig::default()
            }
        })
    }
}
