use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A configuration file or flag combination could not be used.
    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file was read but its contents are not in an accepted format.
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    /// Non-finite values appeared in a forward pass or during training.
    #[error("numeric error{}: {message}", epoch.map(|e| format!(" at epoch {e}")).unwrap_or_default())]
    Numeric { epoch: Option<usize>, message: String },
}

impl Error {
    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn numeric(epoch: Option<usize>, message: impl Into<String>) -> Self {
        Error::Numeric {
            epoch,
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 2 config/argument, 3 I/O or format, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Config(_) => 2,
            Error::Io { .. } | Error::Format { .. } => 3,
            Error::Numeric { .. } => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
