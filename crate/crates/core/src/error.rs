use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the retrieval pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot normalize a zero vector (norm {norm:e})")]
    ZeroVector { norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("non-finite gradient in {group}")]
    NonFiniteGradient { group: String },

    #[error("value {value} for {what} is outside [0, 1]")]
    OutOfRange { what: String, value: f64 },

    #[error("step {step} outside schedule range 0..={total}")]
    StepOutOfRange { step: u64, total: u64 },

    #[error("unknown document id {0}")]
    UnknownDoc(u64),

    #[error("infeasible generator spec: {0}")]
    SpecInfeasible(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}:{line}: missing field `{field}`")]
    MissingField {
        path: PathBuf,
        line: usize,
        field: String,
    },

    #[error("{path}:{line}: invalid example: {reason}")]
    InvalidExample {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("query {qid} references passage {pid} which is not in the corpus")]
    DanglingId { qid: u64, pid: u64 },

    #[error("no ranked result for query {0}")]
    MissingQuery(u64),

    #[error("duplicate id {0}")]
    DuplicateId(u64),

    #[error("non-finite loss at step {step} in {component}")]
    NumericAbort { step: u64, component: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dims(expected: usize, got: usize) -> Self {
        Error::DimensionMismatch { expected, got }
    }
}
