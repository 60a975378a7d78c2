use thiserror::Error;

use crate::basis::MultiIndex;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("basis cardinality for d={dim}, n={degree} does not fit in usize")]
    SizeOverflow { dim: usize, degree: u32 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("multi-index {index} is not connected to the root (missing predecessor in the set)")]
    Disconnected { index: MultiIndex },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular step matrix at step {step}")]
    SingularStep { step: usize },

    #[error("gradient unavailable: {0}")]
    GradientUnavailable(String),

    #[error("initial guess is infeasible ({0}); choose a different initial guess")]
    InfeasibleInitialGuess(String),

    #[error("riccati solver: {0}")]
    Riccati(String),

    #[error("open-loop solver: {0}")]
    OpenLoop(String),

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error("config: {0}")]
    Config(String),

    #[error("artifact format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
