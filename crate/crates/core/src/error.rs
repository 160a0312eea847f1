use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite: pivot {pivot} has value {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("matrix is not symmetric: max asymmetry {asymmetry:e} exceeds tolerance")]
    NotSymmetric { asymmetry: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("series too short: need at least {required} samples, got {actual}")]
    TooShort { required: usize, actual: usize },

    #[error("covariance is ill-conditioned (condition number {condition:e}) after jitter")]
    IllConditioned { condition: f64 },

    #[error("observability block is rank deficient (rank {rank}, order {order})")]
    RankDeficient { rank: usize, order: usize },

    #[error("ELBO became non-finite at iteration {iteration}; state: {state}")]
    NonFiniteElbo { iteration: usize, state: String },

    #[error("row {row}: {message}")]
    Csv { row: usize, message: String },

    #[error("no usable samples remain after excluding {excluded} degenerate draws")]
    EmptyPosterior { excluded: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
