use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("rng state must be nonzero")]
    InvalidSeed,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("target values must be 0 or 1, found {0}")]
    InvalidTarget(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint: bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("checkpoint: unsupported version {0}")]
    VersionMismatch(u32),

    #[error("checkpoint: stream truncated")]
    Truncated,

    #[error("checkpoint: duplicate entry name {0:?}")]
    DuplicateName(String),

    #[error("checkpoint: missing entry {0:?}")]
    MissingEntry(String),

    #[error("pnm: unsupported format {0:?}")]
    UnsupportedFormat(String),

    #[error("pnm: maxval must be 255, found {0}")]
    BadMaxval(u32),

    #[error("pnm: malformed header: {0}")]
    BadHeader(String),

    #[error("pnm: pixel payload truncated (expected {expected} bytes, found {found})")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by malformed input data or files, as opposed to
    /// misuse of the API.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::File { .. }
                | Error::Data(_)
                | Error::Pairing(_)
                | Error::Io(_)
                | Error::BadMagic(_)
                | Error::VersionMismatch(_)
                | Error::Truncated
                | Error::DuplicateName(_)
                | Error::MissingEntry(_)
                | Error::UnsupportedFormat(_)
                | Error::BadMaxval(_)
                | Error::BadHeader(_)
                | Error::TruncatedPayload { .. }
        )
    }
}
