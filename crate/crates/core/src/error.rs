use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid link config: {0}")]
    InvalidLink(String),

    #[error("active mask has {got} entries but the network has {expected} flows")]
    MaskLength { expected: usize, got: usize },

    #[error("monitor interval duration must be positive, got {0}")]
    NonPositiveDuration(f64),

    #[error("Jain index is undefined when every throughput is zero")]
    JainUndefined,

    #[error("invalid throughput sample: {0}")]
    InvalidThroughput(f64),

    #[error("solo baseline throughput must be positive, got {0}")]
    MissingSoloBaseline(f64),

    #[error("empty series")]
    EmptySeries,

    #[error("series length mismatch: {0} vs {1}")]
    SeriesLength(usize, usize),

    #[error("malformed checkpoint {path}: {reason}")]
    MalformedCheckpoint { path: PathBuf, reason: String },

    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    CheckpointVersion { expected: u32, found: u32 },

    #[error("observation dimension mismatch: checkpoint expects {checkpoint}, scenario provides {scenario}")]
    ObsDimMismatch { checkpoint: usize, scenario: usize },

    #[error("invalid network shape: {0}")]
    InvalidShape(String),

    #[error("non-finite loss in minibatch {batch}")]
    NonFiniteLoss { batch: usize },

    #[error("strategy {0} requires a frozen baseline checkpoint")]
    MissingBaseline(String),

    #[error("invalid dynamic trace: {0}")]
    InvalidTrace(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
