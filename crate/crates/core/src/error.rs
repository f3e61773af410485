use std::path::PathBuf;

use thiserror::Error;

use crate::gateway::BackendError;
use crate::manifest::ManifestReport;
use crate::metrics::MetricError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("invalid manifest:\n{0}")]
    Manifest(ManifestReport),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid score range [{lo}, {hi}]")]
    DegenerateRange { lo: f64, hi: f64 },

    #[error("value {value} outside [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("frame {height}x{width} is smaller than crop size {size}")]
    FrameTooSmall { height: usize, width: usize, size: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("video {video_id} has no kept trials ({rejected} rejected)")]
    NoKeptTrials { video_id: String, rejected: usize },

    #[error("insufficient trials for {video_id} frame {frame_index}: need {needed}, have {available}")]
    InsufficientTrials {
        video_id: String,
        frame_index: usize,
        needed: usize,
        available: usize,
    },

    #[error("missing data for video {video_id}: {what}")]
    MissingVideo { video_id: String, what: String },

    #[error(transparent)]
    Metric(#[from] MetricError),

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
