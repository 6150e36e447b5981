use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Vector or dataset dimensions disagree with the model layout.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A structural invariant (weights summing to one, partition laws) was violated.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("malformed IDX file {path}: {reason} (byte offset {offset})")]
    Format {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    /// Invalid experiment or builder configuration; `field` is a dotted path.
    #[error("config error at `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// Training produced a non-finite loss.
    #[error("numeric divergence at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("solver did not converge after {iters} iterations (gradient norm {grad_norm:.3e})")]
    NoConvergence { iters: usize, grad_norm: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Divergence { .. } => 3,
            _ => 1,
        }
    }
}
