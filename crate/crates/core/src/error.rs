use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("matrix is not symmetric (|a[{i}][{j}] - a[{j}][{i}]| = {gap:e})")]
    NotSymmetric { i: usize, j: usize, gap: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("problem is infeasible")]
    Infeasible,

    #[error("system matrix is singular")]
    Singular,

    #[error("solver hit its iteration limit ({0} iterations)")]
    IterationLimit(usize),

    #[error("instance generation failed after {0} rejected draws")]
    GenerationFailed(usize),

    #[error("at least {needed} samples required, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("strong-convexity modulus must be positive, got {0}")]
    NonpositiveModulus(f64),

    #[error("mean vector is zero")]
    ZeroMean,

    #[error("window covariance is singular and cannot be regularized")]
    SingularWindowCovariance,

    #[error("no tickers survive filtering")]
    EmptyUniverse,

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
