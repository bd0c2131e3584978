use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported or malformed volume file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("invalid spacing {0:?}")]
    InvalidSpacing([f64; 3]),

    #[error("non-finite intensity at voxel {0:?}")]
    NonFinite([usize; 3]),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("annotation error: {0}")]
    Annotation(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("degenerate slice: {0}")]
    DegenerateSlice(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("insufficient angular sampling: {0} angles (need at least 16)")]
    InsufficientAngles(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("target noise too high: {target:.1} HU, at most {reached:.1} HU reached above the flux floor")]
    TargetUnreachable { target: f64, reached: f64 },

    #[error("no spine candidate: {0}")]
    NoSpineCandidate(String),

    #[error("model failure (exit {0})")]
    ModelExit(i32),

    #[error("model terminated by signal")]
    ModelSignal,

    #[error("model timed out after {0:.1} s")]
    ModelTimeout(f64),

    #[error("model output error: {0}")]
    ModelOutput(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }
}
