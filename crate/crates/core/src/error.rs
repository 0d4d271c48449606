use thiserror::Error;

/// Errors raised by the deblurring library.
#[derive(Debug, Error)]
pub enum DeblurError {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Input carries no usable signal (all-zero, constant, or a zero crop).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("imaginary residue {residue:e} exceeds tolerance {tolerance:e}")]
    ImaginaryResidue { residue: f64, tolerance: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("optimization diverged: energy rose from {previous} to {current}")]
    Diverged { previous: f64, current: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, DeblurError>;
