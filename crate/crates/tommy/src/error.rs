//! One error type for the whole crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A clock model failed validation (edges, densities, mass).
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    /// A scalar argument was outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Quantile order must lie strictly inside (0, 1).
    #[error("quantile order {0} outside (0, 1)")]
    QuantileDomain(f64),

    /// Two degenerate clocks produced identical effective timestamps.
    #[error("exact tie between degenerate clocks")]
    ExactTie,

    /// A pair compared at probability exactly 0.5; the tournament has no
    /// edge direction for it.
    #[error("tied pair: {first} vs {second} at probability 0.5")]
    TiedPair { first: String, second: String },

    #[error("duplicate message id {0}")]
    DuplicateId(String),

    #[error("unknown client {0}")]
    UnknownClient(String),

    /// Topological order requested on a graph that still has a cycle.
    #[error("cycle present; break cycles before ordering")]
    CyclePresent,

    /// A caller-supplied order does not match the tournament.
    #[error("order mismatch: {0}")]
    OrderMismatch(String),

    #[error("empty batch has no emission time")]
    EmptyBatch,

    /// A client has never reported; the conservative watermark is undefined.
    #[error("no watermark for client {0}")]
    WatermarkMissing(String),

    /// Ordered-channel protocol violation: a client's events must carry
    /// nondecreasing local timestamps.
    #[error("non-monotonic event from {client}: watermark {prev}, got {got}")]
    NonMonotonicEvent { client: String, prev: f64, got: f64 },

    #[error("no rank assigned to message {0}")]
    MissingRank(String),

    #[error("no ground truth for message {0}")]
    MissingTruth(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("protocol error at line {line}: {msg}")]
    Protocol { line: usize, msg: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
