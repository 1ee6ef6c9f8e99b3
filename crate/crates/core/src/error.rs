use std::path::PathBuf;

use thiserror::Error;

use crate::mdp::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP instance ({} violation(s)); first: {}", .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    InvalidMdp(Vec<Violation>),

    /// Shapes of two objects that must agree do not (policy vs. instance,
    /// tree vs. feature schema, ...).
    #[error("structural mismatch: {0}")]
    Structure(String),

    #[error("search space too large: {what} needs {size:.3e} candidates, limit is {limit:.0e}")]
    GuardExceeded { what: String, size: f64, limit: f64 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
