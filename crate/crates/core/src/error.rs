use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("insufficient sequence length: need {needed}, have {available}")]
    InsufficientLength { needed: usize, available: usize },

    #[error("tail sum requires finite support")]
    InfiniteSupport,

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("input not {order}-monotone: negative difference at index {index}")]
    NotMonotone { order: usize, index: usize },

    #[error("argument out of range: {0}")]
    ArgumentOutOfRange(f64),

    #[error("invalid dimension {0}")]
    InvalidDimension(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degree {degree} exceeds the recurrence limit {limit}")]
    DegreeTooLarge { degree: usize, limit: usize },

    #[error("quadrature not converged at degree {degree}: relative change {change:e}")]
    QuadratureNotConverged { degree: usize, change: f64 },

    #[error("insufficient stored degrees: {available} eigenvalues available, {requested} requested")]
    InsufficientDegrees { available: u128, requested: usize },

    #[error("negative mode eigenvalue {value:e} at degree {degree}")]
    NegativeMode { degree: usize, value: f64 },

    #[error("non-finite input coordinate")]
    NonFinite,

    #[error("descriptor variant mismatch: {0}")]
    VariantMismatch(&'static str),

    #[error("eigensolve failed")]
    EigenFailure,

    #[error("Gram not PD: smallest eigenvalue {0:e}")]
    NotPositiveDefinite(f64),

    #[error("window exceeds reliable spectrum: index {index} (of {available} positive eigenvalues)")]
    WindowExceedsSpectrum { index: usize, available: usize },

    #[error("smoothness below threshold: s = {s} must exceed {threshold}")]
    SmoothnessBelowThreshold { s: f64, threshold: f64 },

    #[error("training diverged at step {step}: residual {residual:e} (was {previous:e} 100 steps earlier)")]
    Diverged { step: usize, residual: f64, previous: f64 },

    #[error("time misalignment: {0}")]
    TimeMisaligned(String),

    #[error("malformed input: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
