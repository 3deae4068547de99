//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
///
/// The variants map onto process exit codes in the CLI: contract violations
/// exit with 2, numeric failures with 3, search failures with 4.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition or invariant stated by an operation's contract was
    /// violated by the caller or by loaded data.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A forward or backward pass produced a NaN/Inf where finite values are
    /// required. `context` names the operation or edge set involved.
    #[error("numeric failure in {context}: {detail}")]
    Numeric { context: String, detail: String },

    /// A search (e.g. minimal-circuit binary search, train-to-target) could
    /// not reach its goal. Carries a human-readable account of what was tried.
    #[error("search failed: {0}")]
    Search(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    /// Malformed artifact file (checkpoint, corpus, dataset, ...).
    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn numeric(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
            detail: detail.into(),
        }
    }

    /// Exit code the CLI should use for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Contract(_) => 2,
            Error::Numeric { .. } => 3,
            Error::Search(_) => 4,
            Error::Io(_) | Error::Json(_) | Error::Format { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Bail out with a contract violation unless `cond` holds.
#[macro_export]
macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)*)));
        }
    };
}
