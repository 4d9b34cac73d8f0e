use thiserror::Error;

use crate::particles::ParticleState;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A particle update produced NaN or an infinity. Carries the last finite state.
    #[error("non-finite value at iteration {iteration}: {context}")]
    NonFinite {
        iteration: usize,
        context: String,
        snapshot: Box<ParticleState>,
    },

    #[error("non-finite Monte Carlo sample: {0}")]
    NonFiniteSample(String),

    #[error("target has no normalized log-density")]
    NotNormalized,

    #[error("target is not a Gaussian mixture")]
    NotMixture,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("not enough records: need {needed}, got {got}")]
    InsufficientRecords { needed: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
