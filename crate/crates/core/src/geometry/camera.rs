use serde::{Deserialize, Serialize};

use super::{Pose, Pose2D, Pose3D, PoseSequence2D, PoseSequence3D};
use crate::error::{Error, Result};

/// Joints closer to the camera than this are rejected by projection.
pub const DEFAULT_DEPTH_EPSILON_MM: f64 = 100.0;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: f64, height: f64) -> Result<Self> {
        let cam = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.fx, self.fy, self.cx, self.cy, self.width, self.height];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCamera("non-finite parameter".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 || self.width <= 0.0 || self.height <= 0.0 {
            return Err(Error::InvalidCamera(
                "focal lengths and resolution must be positive".into(),
            ));
        }
        if !(0.0..=self.width).contains(&self.cx) || !(0.0..=self.height).contains(&self.cy) {
            return Err(Error::InvalidCamera(format!(
                "principal point ({}, {}) outside the {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Pixel to normalized coordinates. Both axes are centred on the image
    /// and divided by `w/2`, so `x` spans `[-1, 1]` and the aspect ratio holds.
    pub fn normalize_point(&self, u: f64, v: f64) -> [f64; 2] {
        let half_w = self.width / 2.0;
        [(u - half_w) / half_w, (v - self.height / 2.0) / half_w]
    }

    pub fn denormalize_point(&self, x: f64, y: f64) -> [f64; 2] {
        let half_w = self.width / 2.0;
        [x * half_w + half_w, y * half_w + self.height / 2.0]
    }

    /// Pinhole projection to pixels; `None` when `z <= depth_epsilon`.
    pub fn project_point(&self, p: [f64; 3], depth_epsilon: f64) -> Option<[f64; 2]> {
        if p[2] <= depth_epsilon {
            return None;
        }
        Some([
            self.cx + self.fx * p[0] / p[2],
            self.cy + self.fy * p[1] / p[2],
        ])
    }

    /// Inverse of [`project_point`](Self::project_point) given the true depth.
    pub fn back_project(&self, pixel: [f64; 2], depth: f64) -> [f64; 3] {
        [
            (pixel[0] - self.cx) * depth / self.fx,
            (pixel[1] - self.cy) * depth / self.fy,
            depth,
        ]
    }
}

/// Map a pose given in pixels to normalized image coordinates.
pub fn normalize_image_coords(pixel_pose: &[[f64; 2]], cam: &CameraIntrinsics) -> Result<Pose2D> {
    if pixel_pose.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidPose("non-finite pixel coordinate".into()));
    }
    Ok(Pose2D(
        pixel_pose
            .iter()
            .map(|p| cam.normalize_point(p[0], p[1]))
            .collect(),
    ))
}

pub fn denormalize_image_coords(pose: &Pose2D, cam: &CameraIntrinsics) -> Vec<[f64; 2]> {
    pose.0
        .iter()
        .map(|p| cam.denormalize_point(p[0], p[1]))
        .collect()
}

/// Project a single 3D pose; `frame` only labels errors.
pub fn project_pose(
    pose: &Pose3D,
    cam: &CameraIntrinsics,
    depth_epsilon: f64,
    frame: usize,
) -> Result<Pose2D> {
    pose.check(pose.joint_count())?;
    let mut out = Vec::with_capacity(pose.joint_count());
    for (joint, p) in pose.0.iter().enumerate() {
        let px = cam
            .project_point(*p, depth_epsilon)
            .ok_or(Error::ProjectionDomain {
                frame,
                joint,
                depth: p[2],
            })?;
        out.push(cam.normalize_point(px[0], px[1]));
    }
    Ok(Pose2D(out))
}

/// Project every frame of a camera-space sequence into normalized 2D.
pub fn project_to_camera(
    seq: &PoseSequence3D,
    cam: &CameraIntrinsics,
    depth_epsilon: f64,
) -> Result<PoseSequence2D> {
    cam.validate()?;
    let frames = seq
        .frames
        .iter()
        .enumerate()
        .map(|(t, p)| project_pose(p, cam, depth_epsilon, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(PoseSequence2D {
        frames,
        frame_rate: seq.frame_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn square_cam() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 1000.0, 500.0, 500.0, 1000.0, 1000.0).unwrap()
    }

    #[test]
    fn normalization_examples() {
        let cam = square_cam();
        assert_eq!(cam.normalize_point(500.0, 500.0), [0.0, 0.0]);
        assert_eq!(cam.normalize_point(1000.0, 500.0), [1.0, 0.0]);
        let hd = CameraIntrinsics::new(1000.0, 1000.0, 960.0, 540.0, 1920.0, 1080.0).unwrap();
        // (1080 - 540) / 960
        assert_eq!(hd.normalize_point(960.0, 1080.0), [0.0, 0.5625]);
    }

    #[test]
    fn normalization_rejects_non_finite() {
        let err = normalize_image_coords(&[[f64::NAN, 0.0]], &square_cam()).unwrap_err();
        assert!(matches!(err, Error::InvalidPose(_)));
    }

    #[test]
    fn projection_examples() {
        let cam = square_cam();
        assert_eq!(cam.project_point([0.0, 0.0, 2000.0], 100.0), Some([500.0, 500.0]));
        assert_eq!(cam.project_point([100.0, 0.0, 2000.0], 100.0), Some([550.0, 500.0]));
        let seq = PoseSequence3D::new(
            vec![
                Pose3D(vec![[0.0, 0.0, 2000.0]]),
                Pose3D(vec![[0.0, 0.0, -5.0]]),
            ],
            50.0,
        )
        .unwrap();
        match project_to_camera(&seq, &cam, DEFAULT_DEPTH_EPSILON_MM) {
            Err(Error::ProjectionDomain { frame, joint, .. }) => {
                assert_eq!((frame, joint), (1, 0))
            }
            other => panic!("expected projection error, got {other:?}"),
        }
    }

    #[test]
    fn camera_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 2.0, 2.0).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 3.0, 1.0, 2.0, 2.0).is_err());
    }

    proptest! {
        #[test]
        fn normalize_round_trip(u in 0.0f64..1920.0, v in 0.0f64..1080.0) {
            let cam = CameraIntrinsics::new(1145.0, 1144.0, 960.0, 540.0, 1920.0, 1080.0).unwrap();
            let n = cam.normalize_point(u, v);
            let back = cam.denormalize_point(n[0], n[1]);
            prop_assert!((back[0] - u).abs() < 1e-9 && (back[1] - v).abs() < 1e-9);
        }

        #[test]
        fn back_projection_recovers_xy(x in -2000.0f64..2000.0, y in -2000.0f64..2000.0, z in 500.0f64..8000.0) {
            let cam = square_cam();
            let px = cam.project_point([x, y, z], 100.0).unwrap();
            let p = cam.back_project(px, z);
            assert_abs_diff_eq!(p[0], x, epsilon = 1e-6 * x.abs().max(1.0));
            assert_abs_diff_eq!(p[1], y, epsilon = 1e-6 * y.abs().max(1.0));
        }
    }
}
