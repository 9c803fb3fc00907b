use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate bandwidth: all {0} values are identical")]
    DegenerateBandwidth(usize),

    #[error("invalid bandwidth {0}: must be positive and finite")]
    InvalidBandwidth(f64),

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("row {0} has zero norm and cannot be projected to the unit sphere")]
    ZeroRow(usize),

    #[error("{what} must have unit norm (got {norm})")]
    NotUnitNorm { what: &'static str, norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is singular")]
    Singular,

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("model variant `{0}` has no exact sampler; use rbm_gibbs for RBMs")]
    UnsupportedSampler(&'static str),

    #[error("operation requires an RBM model, got `{0}`")]
    NotRbm(&'static str),

    #[error("chain diverged with step size {step_size} (|x| = {norm:e})")]
    ChainDiverged { step_size: f64, norm: f64 },

    #[error("training diverged at step {step} (test NLL {nll} vs initial {initial}); try a smaller learning rate")]
    TrainingDiverged { step: usize, nll: f64, initial: f64 },

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { field: field.into(), reason: reason.into() }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { field: field.into(), reason: reason.into() }
    }

    /// True for errors caused by the caller's configuration or parameters
    /// rather than by a runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::InvalidParameter { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
