//! Skeletons, poses, camera projection, flipping, interpolation and pose
//! velocity. Every function here is pure.

mod camera;
mod interp;
mod pose;
mod skeleton;

pub use camera::{
    denormalize_image_coords, normalize_image_coords, project_pose, project_to_camera,
    CameraIntrinsics, DEFAULT_DEPTH_EPSILON_MM,
};
pub use interp::{bilinear_upsample, bilinear_upsample_sequence, pose_velocity};
pub use pose::{
    horizontal_flip, root_relative, Pose, Pose2D, Pose3D, PoseSequence, PoseSequence2D,
    PoseSequence3D,
};
pub use skeleton::{Skeleton, SkeletonFile};
