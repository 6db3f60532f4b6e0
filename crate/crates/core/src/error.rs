use std::path::Path;

/// Errors raised anywhere in the pipeline.
///
/// The variants map onto process exit codes in the CLI: usage/spec errors
/// are caller mistakes, parse/data errors are problems with input files,
/// training and I/O failures are internal.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            context: path.display().to_string(),
            source,
        }
    }

    /// Prefix the message with `ctx`, keeping the error category.
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::Parse(m) => Error::Parse(format!("{ctx}: {m}")),
            Error::Data(m) => Error::Data(format!("{ctx}: {m}")),
            Error::Usage(m) => Error::Usage(format!("{ctx}: {m}")),
            Error::Spec(m) => Error::Spec(format!("{ctx}: {m}")),
            Error::Training(m) => Error::Training(format!("{ctx}: {m}")),
            Error::Io { context, source } => Error::Io {
                context: format!("{ctx}: {context}"),
                source,
            },
        }
    }

    /// Process exit code: 1 internal, 2 usage/config, 3 data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Spec(_) => 2,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            Error::Parse(_) | Error::Data(_) => 3,
            Error::Training(_) | Error::Io { .. } => 1,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(format!("json: {e}"))
    }
}

pub(crate) fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

pub(crate) fn data(msg: impl Into<String>) -> Error {
    Error::Data(msg.into())
}
