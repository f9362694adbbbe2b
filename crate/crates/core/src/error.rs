use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A non-finite value showed up; the payload names where.
    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("jet mode mismatch: {0}")]
    Mode(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("outside the valid domain: {0}")]
    Domain(String),

    #[error("division by zero: {0}")]
    Division(String),

    #[error("training diverged at epoch {epoch}, task {task}: {detail}")]
    Divergence {
        epoch: usize,
        task: usize,
        detail: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("incompatible inputs: {0}")]
    Compatibility(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Argument(_) => 2,
            Error::Divergence { .. } | Error::Numeric(_) => 3,
            Error::Io(_) | Error::Format(_) | Error::Version { .. } | Error::Compatibility(_) => 4,
            _ => 1,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(std::io::Error::other(e.to_string()))
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
