use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed sidecar {path}: {reason}")]
    Sidecar { path: PathBuf, reason: String },

    #[error("unsupported CStack version {0}")]
    UnsupportedVersion(u64),

    #[error("raw payload is {actual} bytes, sidecar implies {expected}")]
    SizeMismatch { expected: u64, actual: u64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("calibration region {extents:?} too small for kernel radius {tau}")]
    CalibrationTooSmall { extents: Vec<usize>, tau: usize },

    #[error("no nullspace vectors below {threshold_ratio} * sigma_1")]
    EmptyNullspace { threshold_ratio: f64 },

    #[error("filter field needs {requested} complex values, cap is {cap}")]
    MemoryCap { requested: usize, cap: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
