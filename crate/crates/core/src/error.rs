use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the denoising toolkit.
///
/// The variants are coarse on purpose: callers (the CLI in particular) map
/// them onto process exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// Two operands disagree on shape, or a shape violates a precondition.
    #[error("shape error: {0}")]
    Shape(String),

    /// A scalar argument lies outside its valid domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// An image file has a property this toolkit cannot handle.
    #[error("unsupported image format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// A configuration is inconsistent or incomplete.
    #[error("config error: {0}")]
    Config(String),

    /// Input data is missing or malformed.
    #[error("data error: {0}")]
    Data(String),

    /// Training diverged.
    #[error("non-finite loss at step {step} (lr {learning_rate:e}, batch seed {batch_seed:#x})")]
    NonFiniteLoss {
        step: u64,
        learning_rate: f64,
        batch_seed: u64,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}

macro_rules! domain_err {
    ($($arg:tt)*) => { $crate::error::Error::Domain(format!($($arg)*)) };
}

pub(crate) use {domain_err, shape_err};
