//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not compose.
    #[error("shape error: {0}")]
    Shape(String),

    /// A parameter (distribution parameter, hyperparameter, argument) is out
    /// of its valid range.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// An API contract was violated (stale cache, duplicate batch ids,
    /// stepping a frozen network, asymmetric input to a symmetric solver).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Rank-deficient input where full column rank is required.
    #[error("rank error: {0}")]
    RankDeficient(String),

    /// Optimization produced a non-finite loss.
    #[error("divergence at step {step}: {context}")]
    Divergence { step: usize, context: String },

    /// A binary file failed to parse (bad magic, bad version, truncation,
    /// inconsistent counts).
    #[error("format error: {0}")]
    Format(String),

    /// A run configuration failed validation; the message carries
    /// field-level diagnostics.
    #[error("config error: {0}")]
    Config(String),

    /// A required input file does not exist.
    #[error("missing file: {0}")]
    MissingFile(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParam(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Process exit code used by the experiment runner binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingFile(_) => 2,
            Error::Divergence { .. } => 3,
            _ => 1,
        }
    }
}
