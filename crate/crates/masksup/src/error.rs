use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] masksup_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("no matching {missing} for `{stem}`")]
    MissingPair { stem: String, missing: &'static str },

    #[error("{path}: checksum mismatch")]
    ChecksumMismatch { path: PathBuf },

    #[error("{path}: malformed checkpoint: {reason}")]
    BadCheckpoint { path: PathBuf, reason: String },

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("config key `{key}`: {reason}")]
    BadValue { key: String, reason: String },

    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error("plot: {0}")]
    Plot(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub(crate) fn image(path: impl Into<PathBuf>) -> impl FnOnce(image::ImageError) -> Self {
        let path = path.into();
        move |source| Error::Image { path, source }
    }

    /// Process exit code for this error: 3 for numeric failures, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(masksup_core::Error::NonFiniteLoss { .. }) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
