use std::path::PathBuf;

use crate::snapshot::SnapshotMatrix;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("solution blew up at step {step}")]
    BlowUp { step: usize },

    #[error(transparent)]
    Integration(#[from] Box<IntegrationFailure>),

    #[error("normal equations are not positive definite; use the pseudoinverse path")]
    NotPositiveDefinite,

    #[error("{what} needs {required} bytes, above the {budget}-byte memory budget")]
    MemoryBudget {
        what: &'static str,
        required: u128,
        budget: u128,
    },

    #[error("every grid-search candidate diverged: {0:?}")]
    AllCandidatesDiverged(Vec<CandidateFailure>),

    #[error("malformed container {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for configuration/input problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_)
            | Error::BlowUp { .. }
            | Error::Integration(_)
            | Error::NotPositiveDefinite
            | Error::AllCandidatesDiverged(_) => 2,
            _ => 1,
        }
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}

/// An integration that stopped before reaching its final time.
///
/// `partial` holds every output-grid sample produced before the failure.
#[derive(Debug, thiserror::Error)]
#[error("integration failed at t = {last_valid_time}: {reason}")]
pub struct IntegrationFailure {
    pub last_valid_time: f64,
    pub reason: String,
    pub partial: SnapshotMatrix,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CandidateFailure {
    pub log10_lambda2: f64,
    pub log10_lambda3: f64,
    pub failure_time: Option<f64>,
    pub reason: String,
}
