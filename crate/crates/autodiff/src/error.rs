use thiserror::Error;

/// Errors raised by tensor construction, graph operations and checkpoint I/O.
#[derive(Debug, Error)]
pub enum AdError {
    /// Operand shapes are incompatible for the requested operation.
    #[error("dimension error: {0}")]
    Shape(String),
    /// Input lies outside the domain of the operation (for example `log` of a non-positive value).
    #[error("domain error: {0}")]
    Domain(String),
    /// A caller-side precondition was violated.
    #[error("contract error: {0}")]
    Contract(String),
    /// Malformed or incompatible checkpoint contents.
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AdError>;
