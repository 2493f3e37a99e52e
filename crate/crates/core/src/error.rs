//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("non-finite sample at reverse step {step}")]
    NonFiniteSample { step: usize },

    #[error("non-finite training loss (sample {sample}, diffusion step {k})")]
    NonFiniteLoss { sample: usize, k: usize },

    #[error("diffusion step {k} outside 1..={max}")]
    StepOutOfRange { k: usize, max: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no platoons found ({rows_read} rows read, {rows_rejected} rejected)")]
    NoPlatoonsFound {
        rows_read: usize,
        rows_rejected: usize,
    },

    #[error("need at least 2 platoons to split, found {0}")]
    TooFewPlatoons(usize),

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("no collision-free platoon after {attempts} attempts")]
    CollisionRetriesExhausted { attempts: usize },

    #[error("checkpoint incompatible: {0}")]
    CheckpointMismatch(String),

    #[error("bad array container: {0}")]
    BadContainer(String),

    #[error("array {0} missing from container")]
    MissingArray(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
