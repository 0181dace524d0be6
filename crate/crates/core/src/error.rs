use thiserror::Error;

/// Errors produced by the estimators and their building blocks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("truncated distribution has zero probability mass")]
    ZeroMass,

    #[error("failure probability is not rare: G(0) = {0} <= 0")]
    UnsafeOrigin(f64),

    #[error("correlation matrix is not positive definite even with nugget {0:e}")]
    SingularCorrelation(f64),

    #[error("degenerate level: every conditional failure probability is zero")]
    DegenerateLevel,

    #[error("all resampling weights are zero")]
    ZeroWeights,

    #[error("seed lies outside the failure domain (g = {0})")]
    SeedOutsideDomain(f64),

    #[error("no convergence after {0} levels")]
    NonConvergence(usize),

    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),
}

pub type Result<T> = std::result::Result<T, Error>;
