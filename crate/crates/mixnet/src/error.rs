use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix dimension did not match what an operation requires.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Input failed a value-level precondition (off-simplex gate, bad probability, ...).
    #[error("invalid input: {0}")]
    Validation(String),

    /// A matrix that must be positive definite was singular; the index names
    /// the first pivot that failed.
    #[error("singular matrix: leading minor {dimension} is not positive definite")]
    Singular { dimension: usize },

    /// Training hit a non-finite loss.
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },

    /// A serialized dataset or checkpoint was malformed.
    #[error("bad file format: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI; documented in `mixnet --help`.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Validation(_) => 2,
            Error::Io(_) | Error::Format(_) | Error::Json(_) => 3,
            Error::NanLoss { .. } => 4,
            Error::Shape { .. } | Error::Singular { .. } => 5,
        }
    }
}
