//! Regime-weighted conformal calibration of one-day value-at-risk bounds.
//!
//! The pipeline runs ingest ([`data`]) → regime embedding ([`regime`]) →
//! base quantile forecast ([`forecasters`]) → sequential calibration
//! ([`calibrators`]) → backtest metrics ([`evaluation`]).

pub mod calibrators;
pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod forecasters;
pub mod regime;
pub mod rng;
pub mod synth;
pub mod tuning;
pub mod weighting;
pub mod wquantile;

pub use error::{Error, ErrorClass, Result};
