use thiserror::Error;

/// Errors surfaced by the simulator and training pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A physical or configuration parameter is out of its valid domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Vector or matrix dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A discrete action or codec index is outside its declared range.
    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: u64, limit: u64 },

    /// An enumeration would exceed the configured cap.
    #[error("enumeration size {size} exceeds cap {cap}")]
    CapExceeded { size: u64, cap: u64 },

    /// Experiment configuration rejected with a precise reason.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
