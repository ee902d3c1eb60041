use std::io;

/// Error type shared by every module in the crate.
///
/// The three variants map onto the CLI's exit-code contract: `Domain`
/// for invalid arguments and contract violations (exit 1), `Format`
/// for malformed data files (exit 2), `Io` for filesystem failures
/// (exit 2).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Domain(String),

    #[error("{0}")]
    Format(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
