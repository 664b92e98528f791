use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose3D, PoseSequence3D};

/// Inclusive `[lo, hi]`; `lo == hi` pins the value.
pub type Range = (f64, f64);

/// Distribution of virtual cameras and subject placements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraRanges {
    pub focal_px: Range,
    pub width_px: f64,
    pub height_px: f64,
    /// Pelvis distance from the camera along the optical axis, mm.
    pub depth_mm: Range,
    pub lateral_mm: Range,
    pub vertical_mm: Range,
    pub yaw_rad: Range,
    /// Root drift speed, mm/s, in a random horizontal direction.
    pub drift_mm_s: Range,
    pub max_attempts: usize,
}

impl Default for CameraRanges {
    fn default() -> Self {
        CameraRanges {
            focal_px: (1100.0, 1200.0),
            width_px: 1000.0,
            height_px: 1000.0,
            depth_mm: (3500.0, 5500.0),
            lateral_mm: (-500.0, 500.0),
            vertical_mm: (0.0, 300.0),
            yaw_rad: (-std::f64::consts::PI, std::f64::consts::PI),
            drift_mm_s: (0.0, 100.0),
            max_attempts: 100,
        }
    }
}

/// Rigid placement of a body-frame clip in camera coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub yaw_rad: f64,
    pub root_mm: [f64; 3],
    pub drift_mm_s: [f64; 3],
}

impl Placement {
    pub fn apply(&self, body: &PoseSequence3D) -> PoseSequence3D {
        let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), self.yaw_rad);
        let frames = body
            .frames
            .iter()
            .enumerate()
            .map(|(t, pose)| {
                let s = t as f64 / body.frame_rate;
                Pose3D(
                    pose.0
                        .iter()
                        .map(|p| {
                            let q = rot * Vector3::from(*p);
                            [
                                q.x + self.root_mm[0] + self.drift_mm_s[0] * s,
                                q.y + self.root_mm[1] + self.drift_mm_s[1] * s,
                                q.z + self.root_mm[2] + self.drift_mm_s[2] * s,
                            ]
                        })
                        .collect(),
                )
            })
            .collect();
        PoseSequence3D {
            frames,
            frame_rate: body.frame_rate,
        }
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, r: Range) -> f64 {
    if r.0 >= r.1 {
        r.0
    } else {
        rng.random_range(r.0..=r.1)
    }
}

impl CameraRanges {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            self.focal_px,
            self.depth_mm,
            self.lateral_mm,
            self.vertical_mm,
            self.yaw_rad,
            self.drift_mm_s,
        ];
        if ranges.iter().any(|r| !(r.0 <= r.1) || !r.0.is_finite() || !r.1.is_finite()) {
            return Err(Error::Config("camera range with lo > hi or non-finite bound".into()));
        }
        if self.focal_px.0 <= 0.0 || self.width_px <= 0.0 || self.height_px <= 0.0 {
            return Err(Error::Config("focal length and image size must be positive".into()));
        }
        if self.depth_mm.0 <= 0.0 {
            return Err(Error::Config("subject depth must be positive".into()));
        }
        Ok(())
    }
}

/// Every joint of every frame in front of the camera and inside the image.
pub fn fits_in_view(seq: &PoseSequence3D, cam: &CameraIntrinsics, depth_epsilon: f64) -> bool {
    seq.frames.iter().all(|f| {
        f.0.iter().all(|&p| {
            cam.project_point(p, depth_epsilon).is_some_and(|px| {
                (0.0..=cam.width).contains(&px[0]) && (0.0..=cam.height).contains(&px[1])
            })
        })
    })
}

/// Draw a camera and placement that keep the whole clip visible.
pub fn sample_camera<R: Rng + ?Sized>(
    rng: &mut R,
    ranges: &CameraRanges,
    body: &PoseSequence3D,
    depth_epsilon: f64,
) -> Result<(CameraIntrinsics, Placement)> {
    ranges.validate()?;
    for _ in 0..ranges.max_attempts.max(1) {
        let f = draw(rng, ranges.focal_px);
        let cam = CameraIntrinsics::new(
            f,
            f,
            ranges.width_px / 2.0,
            ranges.height_px / 2.0,
            ranges.width_px,
            ranges.height_px,
        )?;
        let heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let speed = draw(rng, ranges.drift_mm_s);
        let placement = Placement {
            yaw_rad: draw(rng, ranges.yaw_rad),
            root_mm: [
                draw(rng, ranges.lateral_mm),
                draw(rng, ranges.vertical_mm),
                draw(rng, ranges.depth_mm),
            ],
            drift_mm_s: [speed * heading.cos(), 0.0, speed * heading.sin()],
        };
        if fits_in_view(&placement.apply(body), &cam, depth_epsilon) {
            return Ok((cam, placement));
        }
    }
    Err(Error::SamplingFailed {
        attempts: ranges.max_attempts.max(1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Skeleton, DEFAULT_DEPTH_EPSILON_MM};
    use crate::synth::{generate_motion, MotionKind, MotionSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn clip() -> PoseSequence3D {
        let spec = MotionSpec {
            kind: MotionKind::SinusoidalLimbs,
            frames: 100,
            frame_rate: 50.0,
            amplitude_mm: 80.0,
            frequency_hz: 1.0,
            seed: 1,
        };
        generate_motion(&spec, &Skeleton::h36m()).unwrap()
    }

    #[test]
    fn pinned_ranges_give_one_camera() {
        let r = CameraRanges {
            focal_px: (1150.0, 1150.0),
            depth_mm: (4000.0, 4000.0),
            lateral_mm: (0.0, 0.0),
            vertical_mm: (0.0, 0.0),
            yaw_rad: (0.3, 0.3),
            drift_mm_s: (0.0, 0.0),
            ..CameraRanges::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let body = clip();
        let a = sample_camera(&mut rng, &r, &body, DEFAULT_DEPTH_EPSILON_MM).unwrap();
        let b = sample_camera(&mut rng, &r, &body, DEFAULT_DEPTH_EPSILON_MM).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.fx, 1150.0);
    }

    #[test]
    fn subject_at_four_metres_is_in_frame() {
        let cam = CameraIntrinsics::new(1150.0, 1150.0, 500.0, 500.0, 1000.0, 1000.0).unwrap();
        let p = Placement {
            yaw_rad: 0.0,
            root_mm: [0.0, 0.0, 4000.0],
            drift_mm_s: [0.0; 3],
        };
        let placed = p.apply(&clip());
        // body spans about 1.6 m vertically: 1150 * 1600 / 4000 = 460 px < 1000
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for f in &placed.frames {
            for &q in &f.0 {
                let px = cam.project_point(q, 1.0).unwrap();
                lo = lo.min(px[1]);
                hi = hi.max(px[1]);
            }
        }
        assert!(lo > 0.0 && hi < 1000.0 && hi - lo < 500.0);
        assert!(fits_in_view(&placed, &cam, DEFAULT_DEPTH_EPSILON_MM));
    }

    #[test]
    fn impossible_ranges_fail_after_bound() {
        let r = CameraRanges {
            depth_mm: (150.0, 150.0),
            max_attempts: 7,
            ..CameraRanges::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            sample_camera(&mut rng, &r, &clip(), DEFAULT_DEPTH_EPSILON_MM),
            Err(Error::SamplingFailed { attempts: 7 })
        ));
    }
}
