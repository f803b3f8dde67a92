use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension mismatch between arrays.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// Invalid configuration value.
    #[error("invalid config: {0}")]
    Config(String),
    /// Malformed or degenerate data.
    #[error("bad data: {0}")]
    Data(String),
    /// A computation produced NaN or infinity.
    #[error("non-finite value: {0}")]
    NonFinite(String),
    /// File format violation when reading artifacts.
    #[error("bad format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
