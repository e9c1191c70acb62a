use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter is out of range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Data failed an invariant check (dimensions, finiteness, symmetry).
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("parse error at {context}: {message}")]
    Parse { context: String, message: String },

    /// An exhaustive method would exceed its enumeration cap.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
