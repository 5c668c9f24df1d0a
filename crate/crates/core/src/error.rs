use thiserror::Error;

/// Errors raised by the simulators, likelihood evaluators and samplers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A model parameter lies outside its admissible region.
    #[error("parameter-domain error: {name} = {value} ({constraint})")]
    ParameterDomain {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },

    /// An argument other than a model parameter is out of range.
    #[error("domain error: {0}")]
    Domain(String),

    /// Summary statistics could not be formed (e.g. zero interquartile range).
    #[error("degenerate summary: {0}")]
    DegenerateSummary(String),

    /// The estimated synthetic-likelihood covariance is numerically singular.
    #[error("singular synthetic-likelihood covariance at theta = {theta:?} with m = {m}")]
    Singular { theta: Vec<f64>, m: usize },

    /// A matrix expected to be positive-definite failed to factorize.
    #[error("factorization error: {0}")]
    Factorization(String),

    /// The leading-order MA(1) summary covariance is not positive-definite.
    #[error("covariance-domain error: leading-order covariance not positive-definite at theta = {theta}, n = {n}")]
    CovarianceDomain { theta: f64, n: usize },

    /// Every grid point has zero posterior density.
    #[error("degenerate posterior: log-likelihood is -inf on the whole grid")]
    DegeneratePosterior,

    /// The supplied Hessian is not negative-definite.
    #[error("not a local maximum: Hessian is not negative-definite")]
    NotAMax,

    /// Too few grid points fall inside the requested window.
    #[error("insufficient resolution: {points} grid points in window, need at least {required}")]
    InsufficientResolution { points: usize, required: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
