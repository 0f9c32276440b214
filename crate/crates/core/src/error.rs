use std::path::PathBuf;

/// Errors raised by the toolkit.
///
/// Everything except [`Error::Invariant`] is a validation failure caused by
/// the caller's input.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("{source_name}: missing column `{column}`")]
    MissingColumn { source_name: String, column: String },

    #[error("invalid {what}: {message}")]
    Invalid { what: &'static str, message: String },

    #[error("shape mismatch for clip `{clip}`: {message}")]
    Shape { clip: String, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, message: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            message: message.into(),
        }
    }

    pub(crate) fn parse(source_name: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.to_string(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for violations of internal invariants as opposed to bad input.
    pub fn is_internal(&self) -> bool {
        matches!(self, Error::Invariant(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
