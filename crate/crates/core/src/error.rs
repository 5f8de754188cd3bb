use thiserror::Error;

/// Errors produced by the deconvolution library.
#[derive(Debug, Error)]
pub enum DeconvError {
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid dimensions: {0}")]
    InvalidDimension(String),

    #[error("basis is not orthonormal (max |B^T B - I| = {deviation:e})")]
    NotOrthonormal { deviation: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("measurement index (l={l}, n={n}) out of range for L={big_l}, N={big_n}")]
    IndexOutOfRange {
        l: usize,
        n: usize,
        big_l: usize,
        big_n: usize,
    },

    #[error("duplicate measurement index (l={l}, n={n})")]
    DuplicateIndex { l: usize, n: usize },

    #[error("restricted block for (n={n}, p={p}) is ill-conditioned (condition number {condition:e})")]
    IllConditioned { n: usize, p: usize, condition: f64 },

    #[error("zero vector: {0}")]
    ZeroVector(&'static str),

    #[error("empty grid")]
    EmptyGrid,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, DeconvError>;

pub(crate) fn check_finite(what: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(DeconvError::NonFinite { what, index }),
        None => Ok(()),
    }
}
