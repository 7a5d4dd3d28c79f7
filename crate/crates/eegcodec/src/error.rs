//! Crate-wide error type.
//!
//! Every failure carries a category so the CLI can emit one machine-parseable
//! line (`error[category]: message`) and map it to an exit code.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed on-disk container or checkpoint (bad magic, bad header).
    #[error("format: {0}")]
    Format(String),
    /// Structurally valid file whose payload is inconsistent.
    #[error("corruption: {0}")]
    Corruption(String),
    /// Unreadable external input (EDF header fields etc.).
    #[error("ingest: {0}")]
    Ingest(String),
    /// Invalid configuration value or combination.
    #[error("config: {0}")]
    Config(String),
    /// Tensor/signal shape mismatch.
    #[error("shape: {0}")]
    Shape(String),
    /// Channel name not present in the model's channel vocabulary.
    #[error("vocabulary: {0}")]
    Vocabulary(String),
    /// Bad data content (non-finite samples, inconsistent channel sets).
    #[error("data: {0}")]
    Data(String),
    /// An operation was invoked outside its contract (e.g. wrong phase).
    #[error("contract: {0}")]
    Contract(String),
    /// Usage error at the CLI boundary.
    #[error("usage: {0}")]
    Usage(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short category tag used in CLI output.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Format(_) => "format",
            Error::Corruption(_) => "corruption",
            Error::Ingest(_) => "ingest",
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::Vocabulary(_) => "vocabulary",
            Error::Data(_) => "data",
            Error::Contract(_) => "contract",
            Error::Usage(_) => "usage",
            Error::Io(_) => "io",
        }
    }

    /// Exit code the CLI maps this error to: 2 usage, 3 validation, 1 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Config(_)
            | Error::Shape(_)
            | Error::Vocabulary(_)
            | Error::Format(_)
            | Error::Contract(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
