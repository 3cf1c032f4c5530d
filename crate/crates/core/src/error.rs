//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(
        "matrix is numerically rank deficient (min/max singular value = {min_sv:.3e}/{max_sv:.3e})"
    )]
    RankDeficient { min_sv: f64, max_sv: f64 },

    #[error("ambient dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("cannot realize {requested} principal angles: capacity is min(d, D-d) = {capacity}")]
    InfeasibleAngles { requested: usize, capacity: usize },

    #[error("diffusion time must be nonnegative, got {t}")]
    NegativeTime { t: f64 },

    #[error("integrand is not finite at node t = {node}")]
    NonFiniteIntegrand { node: f64 },

    #[error("latent time-t covariance is numerically singular")]
    SingularCovariance,

    #[error("operation requires a Gaussian latent distribution")]
    NotGaussian,

    #[error("{branch} branch requires rank(B) = {required}, got {rank}")]
    RankConditionViolated {
        branch: &'static str,
        required: usize,
        rank: usize,
    },

    #[error("cross-Gram matrix is ill conditioned: cos(theta_{index}) = {cos:.3e} < 1e-4")]
    IllConditioned { index: usize, cos: f64 },

    #[error("k = {k} outside valid range [{min}, {max}]")]
    KOutOfRange { k: usize, min: usize, max: usize },

    #[error("eigenvalue {index} of the mixed signal matrix deviates from its closed form: {numeric} vs {closed_form}")]
    SpectrumMismatch {
        index: usize,
        numeric: f64,
        closed_form: f64,
    },

    #[error("iteration diverged: {context}")]
    Diverged { context: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
