use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing sidecar metadata file {0}")]
    MissingSidecar(PathBuf),
    #[error("payload size mismatch: expected {expected} pixels, found {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("pixel value {value} at index {index} outside [0, {max}]")]
    OutOfRange { index: usize, value: f64, max: f64 },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("no consensus set of size >= {required} found (best {best})")]
    NoConsensus { required: usize, best: usize },
    #[error("unphysical fit: {0}")]
    Unphysical(String),
    #[error("not identifiable: {0}")]
    NotIdentifiable(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short machine-readable tag, used by the CLI's structured error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::MissingSidecar(_) => "missing_sidecar",
            Error::SizeMismatch { .. } => "size_mismatch",
            Error::OutOfRange { .. } => "out_of_range",
            Error::InvalidFrame(_) => "invalid_frame",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Degenerate(_) => "degenerate",
            Error::RankDeficient => "rank_deficient",
            Error::NoConsensus { .. } => "no_consensus",
            Error::Unphysical(_) => "unphysical",
            Error::NotIdentifiable(_) => "not_identifiable",
        }
    }
}
