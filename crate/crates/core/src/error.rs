use std::path::PathBuf;

use thiserror::Error;

/// Every failure the toolkit can report.
#[derive(Debug, Error)]
pub enum OpnpError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value at {location}")]
    NonFiniteValue { location: String },

    #[error("invalid {what}: {reason}")]
    InvalidArgument { what: &'static str, reason: String },

    #[error("label {label} at row {row} is out of range for {classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: u32,
        classes: usize,
    },

    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("unknown neuron statistic `{0}`")]
    UnknownStatistic(String),

    #[error("sample ratio {ratio} selects no rows out of {rows}")]
    EmptySelection { ratio: f64, rows: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error(
        "kept band is empty: pruning {low}% low and {high}% high of {total} entries leaves nothing"
    )]
    BandEmpty { low: f64, high: f64, total: usize },

    #[error("length mismatch for {what}: {left} vs {right}")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("invalid histogram range [{low}, {high})")]
    InvalidRange { low: f64, high: f64 },

    #[error("no valid configuration in grid")]
    NoValidConfig,

    #[error("mask selects no pruned weights")]
    EmptyMask,

    #[error("neuron statistic mismatch: expected {expected}, found {found}")]
    StatisticMismatch { expected: String, found: String },

    #[error("invalid toy specification: {0}")]
    InvalidSpec(String),

    #[error("training diverged at epoch {epoch} (loss is not finite)")]
    DivergedTraining { epoch: usize },

    #[error("{path}: bad magic {found:?}, expected \"OPNF\"")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("{path}: unsupported {field} {found}")]
    UnsupportedVersion {
        path: PathBuf,
        field: &'static str,
        found: u32,
    },

    #[error("{path}: truncated at byte offset {offset} while reading {field}")]
    TruncatedFile {
        path: PathBuf,
        offset: u64,
        field: &'static str,
    },

    #[error("{path}: file is {actual} bytes but header declares {expected}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("{path}: schema error in field `{field}`: {reason}")]
    SchemaError {
        path: PathBuf,
        field: String,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl OpnpError {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        OpnpError::InvalidArgument {
            what,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, OpnpError>;
