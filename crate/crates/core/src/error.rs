use std::path::PathBuf;

use thiserror::Error;

/// Every fallible operation in the crate returns this error.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("joint {joint} of frame {frame} is at or behind the camera (z = {depth} mm)")]
    ProjectionDomain { frame: usize, joint: usize, depth: f64 },

    #[error("invalid schedule: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidSchedule(Vec<crate::sequencing::ScheduleViolation>),

    #[error("alignment degenerate: {0}")]
    AlignmentDegenerate(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite gradient in parameter `{path}`")]
    NonFiniteGradient { path: String },

    #[error("camera sampling failed after {attempts} attempts")]
    SamplingFailed { attempts: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch in {0}")]
    Checksum(String),

    #[error("skeleton mismatch: {0}")]
    SkeletonMismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidPose(_) => "invalid_pose",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::ProjectionDomain { .. } => "projection_domain",
            Error::InvalidSchedule(_) => "invalid_schedule",
            Error::AlignmentDegenerate(_) => "alignment_degenerate",
            Error::EmptyInput(_) => "empty_input",
            Error::InvalidSkeleton(_) => "invalid_skeleton",
            Error::InvalidCamera(_) => "invalid_camera",
            Error::Config(_) => "config",
            Error::NonFiniteGradient { .. } => "non_finite_gradient",
            Error::SamplingFailed { .. } => "sampling_failed",
            Error::Format(_) => "format",
            Error::Checksum(_) => "checksum",
            Error::SkeletonMismatch(_) => "skeleton_mismatch",
            Error::Io { .. } => "io",
        }
    }
}
