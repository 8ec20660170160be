use thiserror::Error;

/// Every failure the pipeline can report.
///
/// The variants map onto the CLI exit codes: configuration problems exit
/// with 2, data problems with 3 and training failures with 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("variant `{variant}` does not support {operation}")]
    UnsupportedVariant { variant: String, operation: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn dataset(msg: impl Into<String>) -> Self {
        Error::Dataset(msg.into())
    }

    pub(crate) fn unsupported(variant: impl std::fmt::Display, operation: &str) -> Self {
        Error::UnsupportedVariant {
            variant: variant.to_string(),
            operation: operation.to_string(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) | Error::UnsupportedVariant { .. } => 2,
            Error::Dataset(_) | Error::Checkpoint(_) | Error::Io(_) | Error::Domain(_) => 3,
            Error::Training { .. } | Error::NonFinite(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
