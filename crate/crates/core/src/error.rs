use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to decode image {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("malformed manifest {}: {source}", path.display())]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("malformed csv {}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("dimension mismatch in {}: expected {expected:?}, found {found:?}", path.display())]
    DimensionMismatch {
        path: PathBuf,
        expected: (u32, u32),
        found: (u32, u32),
    },

    #[error("actor {actor:?} has no action {action:?}")]
    DanglingAction { actor: String, action: String },

    #[error("unknown actor {0:?}")]
    UnknownActor(String),

    #[error("unknown layer {0}")]
    UnknownLayer(usize),

    #[error("frame {frame} out of range for {what} with {len} frames")]
    FrameOutOfRange { what: String, frame: usize, len: usize },

    #[error("invalid asset: {0}")]
    InvalidAsset(String),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("vector length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("{0}")]
    Rejected(String),

    #[error("corrupt cache file {}: {reason}", path.display())]
    CorruptCache { path: PathBuf, reason: String },

    #[error("recording was made against manifest {recorded}, project is {current}")]
    HashMismatch { recorded: String, current: String },

    #[error("operation cancelled")]
    Cancelled,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            return Error::MissingFile(path.into());
        }
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}
