use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the egoscene library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point lies outside the field of view (theta = {theta:.6} rad, max = {max_theta:.6} rad)")]
    OutOfFov { theta: f64, max_theta: f64 },

    #[error("ray direction is undefined for a point at the camera center")]
    DegenerateRay,

    #[error("depth must be positive and finite, got {0}")]
    NonPositiveDepth(f64),

    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("no pixels are valid in both inputs")]
    NoOverlap,

    #[error("inpainting needs at least one valid pixel as boundary")]
    EmptyBoundary,

    #[error("scene point cloud is empty")]
    EmptyScene,

    #[error("degenerate joint configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("invalid bone template: {0}")]
    InvalidTemplate(String),

    #[error("heatmap volume is degenerate: {0}")]
    DegenerateHeatmap(String),

    #[error("energy became non-finite at iteration {iteration}")]
    NonFiniteEnergy { iteration: usize },

    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
