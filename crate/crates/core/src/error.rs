use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph is disconnected ({components} components)")]
    DisconnectedGraph { components: usize },

    #[error("self-loop at agent {0}")]
    SelfLoop(usize),

    #[error("duplicate edge {{{0}, {1}}}")]
    DuplicateEdge(usize, usize),

    #[error("agent index {index} out of range for {n} agents")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("eigensolver failed: {0}")]
    EigensolverFailure(String),

    #[error("point outside the mirror-map domain: {0}")]
    DomainViolation(String),

    #[error("numerical overflow: {0}")]
    NumericalOverflow(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("stacked design matrix is rank deficient (sigma_min / sigma_max = {ratio:e})")]
    RankDeficient { ratio: f64 },

    #[error("singular Hessian: {0}")]
    SingularHessian(String),

    #[error("matrix is not symmetric: {0}")]
    AsymmetricInput(String),

    #[error("singular factor in determinant identity: {0}")]
    SingularFactor(String),

    #[error("run diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    #[error("trajectory tail unusable for rate fit: {0}")]
    InsufficientTail(String),

    #[error("all tail samples are at or below the floor {floor:e}")]
    AllBelowFloor { floor: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
