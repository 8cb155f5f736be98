use std::path::PathBuf;

use thiserror::Error;

use crate::fifa::OptimTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// The optimizer produced a non-finite energy or gradient. The trace holds
    /// every step recorded before the failure.
    #[error("non-finite {what} at step {step}")]
    NonFinite {
        what: &'static str,
        step: usize,
        trace: Box<OptimTrace>,
    },

    #[error("all {} candidate transcripts failed: {}", .0.len(), format_failures(.0))]
    AllCandidatesFailed(Vec<(usize, String)>),
}

fn format_failures(failures: &[(usize, String)]) -> String {
    failures
        .iter()
        .map(|(i, msg)| format!("[{i}] {msg}"))
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Short machine-readable category, used for CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::Infeasible(_) => "infeasible",
            Error::Unsupported(_) => "unsupported",
            Error::TooLarge(_) => "too_large",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Json(_) => "parse",
            Error::NonFinite { .. } => "non_finite",
            Error::AllCandidatesFailed(_) => "all_candidates_failed",
        }
    }
}
