//! Error type shared by the whole crate.

use thiserror::Error;

/// Errors produced by data loading, validation, and the conformal pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid alpha {alpha}: must lie strictly inside (0, 1)")]
    InvalidAlpha { alpha: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown method `{0}`")]
    UnknownMethod(String),

    #[error("unknown weight kind `{0}` (expected uniform, hyperbolic, or exponential)")]
    UnknownWeightKind(String),

    #[error("node id {id} out of range for {num_nodes} nodes")]
    NodeOutOfRange { id: usize, num_nodes: usize },

    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("probability row {row} sums to {sum} (must be 1 within {tolerance})")]
    RowNotStochastic {
        row: usize,
        sum: f64,
        tolerance: f64,
    },

    #[error("probability entry at ({row}, {col}) is {value}, outside [0, 1]")]
    ProbabilityOutOfRange { row: usize, col: usize, value: f64 },

    #[error("label {label} at position {index} is not below {num_classes} classes")]
    LabelOutOfRange {
        label: usize,
        index: usize,
        num_classes: usize,
    },

    #[error("need at least {needed} classes, have {have}")]
    TooFewClasses { needed: usize, have: usize },

    #[error("{pool} pool has {available} nodes but {requested} were requested")]
    InsufficientPool {
        pool: &'static str,
        available: usize,
        requested: usize,
    },

    #[error("split is unusable for conformal prediction: {0}")]
    UnusableSplit(&'static str),

    #[error("empty score array")]
    EmptyScores,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("node sets do not match: {0}")]
    MismatchedNodes(String),

    #[error("score table is missing node {0} (needed as a neighbor)")]
    MissingNeighborScore(usize),

    #[error("graph must be symmetrized for this operation")]
    NotSymmetrized,

    #[error("hop count k must be at least 1, got {0}")]
    InvalidHopCount(usize),

    #[error("quantile level {0} must lie in (0, 1] after clamping")]
    InvalidQuantileLevel(f64),

    #[error("calibration set of size {0} is too small to split for correction training")]
    CalibrationTooSmall(usize),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
