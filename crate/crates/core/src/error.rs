//! Crate-wide error type.

use thiserror::Error;

/// Everything that can go wrong across the pipeline, from shape mismatches in
/// the numerical core up to malformed log files and broken checkpoints.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left} vs {right}")]
    Dimension {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("empty softmax input")]
    EmptySoftmax,

    #[error("token id {token} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },

    #[error("unknown query: {0:?}")]
    UnknownQuery(String),

    #[error("session produced no states")]
    EmptySessionTape,

    #[error("empty negative sample list")]
    EmptyNegatives,

    #[error("finite-difference step must be positive, got {0}")]
    BadEpsilon(f64),

    #[error("non-finite loss value {0}")]
    NonFiniteLoss(f64),

    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("query log format: {0}")]
    LogFormat(String),

    #[error("empty corpus after filtering")]
    EmptyCorpus,

    #[error("empty test split")]
    EmptyTestSplit,

    #[error("empty training split: the held-out windows cover the whole timeline")]
    EmptyTrainSplit,

    #[error("corpus file: {0}")]
    CorpusFile(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("unknown trace target: {0}")]
    UnknownTraceTarget(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
