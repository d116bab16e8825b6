//! Error type shared by every module, with a coarse classification used for
//! CLI exit codes and FFI status codes.

use std::fmt;
use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which split segment an error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Segment::Train => "train",
            Segment::Validation => "validation",
            Segment::Test => "test",
        })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("unparseable row at line {line}: {reason}")]
    UnparseableRow { line: u64, reason: String },

    #[error("duplicate date {0}")]
    DuplicateDate(NaiveDate),

    #[error("no data rows")]
    EmptyFile,

    #[error("{0} segment is empty")]
    EmptySegment(Segment),

    #[error("insufficient history: index {got} is below the first usable index {needed}")]
    InsufficientHistory { needed: usize, got: usize },

    #[error("feature `{0}` has zero variance over the standardization range")]
    DegenerateFeature(&'static str),

    #[error("weight vectors cover different index sets")]
    IndexMismatch,

    #[error("empty input")]
    EmptyInput,

    #[error("calibration buffer is empty")]
    EmptyBuffer,

    #[error("no bound has been issued for the pending observation")]
    NothingPending,

    #[error("date mismatch: {0}")]
    DateMismatch(String),

    #[error("invalid exceedance count {x} for n = {n}")]
    InvalidCount { n: usize, x: usize },

    #[error("length {len} is shorter than the required {needed}")]
    InsufficientLength { len: usize, needed: usize },

    #[error("{labels} quintile labels for {n} observations")]
    LabelMismatch { labels: usize, n: usize },

    #[error("grid has no candidates")]
    NoCandidates,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig(_) | Error::NoCandidates => ErrorClass::Config,
            Error::MissingColumn(_)
            | Error::UnparseableRow { .. }
            | Error::DuplicateDate(_)
            | Error::EmptyFile
            | Error::EmptySegment(_)
            | Error::InsufficientHistory { .. }
            | Error::DateMismatch(_)
            | Error::InsufficientLength { .. }
            | Error::LabelMismatch { .. }
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_) => ErrorClass::Data,
            Error::DegenerateFeature(_)
            | Error::IndexMismatch
            | Error::EmptyInput
            | Error::EmptyBuffer
            | Error::NothingPending
            | Error::InvalidCount { .. }
            | Error::NonFinite(_) => ErrorClass::Numeric,
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        }
    }
}
