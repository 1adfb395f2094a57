use thiserror::Error;

/// Errors produced by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input where at least one element is required")]
    EmptyInput,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not Hermitian positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("unsupported constellation order {0} (expected 4 or 16)")]
    InvalidOrder(usize),

    #[error("bit count {bits} is not a multiple of {per_symbol}")]
    BitCount { bits: usize, per_symbol: usize },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid channel profile: {0}")]
    Profile(String),

    #[error("layer {m} lies in the zero-padding region (data layers are 0..{data})")]
    ZeroPaddingLayer { m: usize, data: usize },

    #[error("degenerate layer: |mu| = {0:e} is too small to normalize")]
    DegenerateLayer(f64),

    #[error("tolerance {delta_beta} exceeds 2a = {two_a} (arccos domain)")]
    ToleranceDomain { delta_beta: f64, two_a: f64 },

    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("dense oracle limited to {limit} rows, got {size}")]
    TooLarge { size: usize, limit: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
