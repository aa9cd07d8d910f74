use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite score at position {index}")]
    NonFiniteScore { index: usize },

    #[error("inexact anomaly set {index} is empty")]
    EmptySet { index: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(
        "not enough instances to split: need at least {required_anomalies} anomalies and \
         {required_normals} normals, have {anomalies} and {normals}"
    )]
    InsufficientData {
        required_anomalies: usize,
        required_normals: usize,
        anomalies: usize,
        normals: usize,
    },

    #[error("{path}: row {row}, column {col}: cannot parse {value:?} as a number")]
    NonNumericCell {
        path: PathBuf,
        row: usize,
        col: usize,
        value: String,
    },

    #[error("{path}: row {row}: unknown label value {value:?}")]
    UnknownLabel {
        path: PathBuf,
        row: usize,
        value: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("repeat {repeat}, mode {mode}: {source}")]
    Run {
        repeat: usize,
        mode: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            actual,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
