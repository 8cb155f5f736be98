use std::fmt;
use std::path::Path;

/// Exit status and machine-readable kind of a failed command.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub kind: String,
    pub message: String,
}

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            kind: "usage".into(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        segalign::Error::io(path, err).into()
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "kind": self.kind, "message": self.message }).to_string()
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl From<segalign::Error> for Failure {
    fn from(err: segalign::Error) -> Self {
        let code = match err {
            segalign::Error::NonFinite { .. } | segalign::Error::AllCandidatesFailed(_) => EXIT_RUNTIME,
            _ => EXIT_USAGE,
        };
        Self {
            code,
            kind: err.kind().into(),
            message: err.to_string(),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(err: serde_json::Error) -> Self {
        segalign::Error::from(err).into()
    }
}

impl From<csv::Error> for Failure {
    fn from(err: csv::Error) -> Self {
        Self {
            code: EXIT_RUNTIME,
            kind: "io".into(),
            message: err.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;
