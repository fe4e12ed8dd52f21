use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("corrupt state file: {0}")]
    Corruption(String),

    #[error("unsupported format version {found} (this build reads up to {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("session {session}: {source}")]
    Session {
        session: u32,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::InvalidState(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    pub(crate) fn in_session(self, session: u32) -> Self {
        match self {
            e @ Error::Session { .. } => e,
            other => Error::Session {
                session,
                source: Box::new(other),
            },
        }
    }

    /// Short category name and the process exit code used by the CLI.
    pub fn category(&self) -> (&'static str, i32) {
        match self {
            Error::InvalidArgument(_) => ("invalid-argument", 2),
            Error::InvalidState(_) => ("invalid-state", 3),
            Error::Format { .. } => ("format", 4),
            Error::Corruption(_) => ("corruption", 5),
            Error::UnsupportedVersion { .. } => ("unsupported-version", 6),
            Error::Io(_) => ("io", 7),
            Error::Session { source, .. } => source.category(),
        }
    }
}
