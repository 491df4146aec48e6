use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("{path}: malformed task file: {detail}")]
    MalformedTask { path: PathBuf, detail: String },

    #[error("{path}: {location}: cell value {value} outside 0..=9")]
    CellOutOfRange { path: PathBuf, location: String, value: i64 },

    #[error("{path}: {location}: ragged grid (row {row} has {found} cells, expected {expected})")]
    RaggedGrid { path: PathBuf, location: String, row: usize, found: usize, expected: usize },

    #[error("{path}: {location}: empty grid")]
    EmptyGrid { path: PathBuf, location: String },

    #[error("{path}: {location}: grid {rows}x{cols} exceeds 30x30")]
    GridTooLarge { path: PathBuf, location: String, rows: usize, cols: usize },

    #[error("sequence length {len} exceeds limit {limit}")]
    SequenceTooLong { len: usize, limit: usize },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    CheckpointVersion { found: String, expected: u32 },

    #[error("truncated checkpoint: {0}")]
    CheckpointTruncated(String),

    #[error("malformed checkpoint: {0}")]
    CheckpointFormat(String),

    #[error("checkpoint tensor {name} has shape {found:?}, config expects {expected:?}")]
    ShapeMismatch { name: String, found: Vec<usize>, expected: Vec<usize> },

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGrad(String),

    #[error("loss became non-finite at step {0}")]
    NanLoss(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
