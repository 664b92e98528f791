//! Synthetic paired 2D/3D motion: parametric clips, virtual cameras and the
//! dataset file format.

mod camera;
mod dataset;
mod motion;

pub use camera::{fits_in_view, sample_camera, CameraRanges, Placement, Range};
pub use dataset::{
    build_dataset, synthesize, validate_dataset, validate_file, CameraEntry, Dataset,
    DatasetHeader, Diagnostics, FrameRecord, Issue, IssueKind, NoiseModel, Sequence,
    SequenceInfo, SynthConfig, BONE_LENGTH_TOLERANCE, DATASET_FORMAT_VERSION,
    PROJECTION_TOLERANCE_PX,
};
pub use motion::{
    burst_segments, generate_motion, h36m_rest_pose, rest_pose, sinusoidal_peak_velocity,
    BurstSegment, MotionKind, MotionSpec,
};
