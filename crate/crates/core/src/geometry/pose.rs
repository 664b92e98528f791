use serde::{Deserialize, Serialize};

use super::Skeleton;
use crate::error::{Error, Result};

/// Normalized image coordinates of every joint, `x` in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pose2D(pub Vec<[f64; 2]>);

/// Metric camera coordinates of every joint, in millimetres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pose3D(pub Vec<[f64; 3]>);

/// Shared behaviour of 2D and 3D poses.
pub trait Pose: Clone {
    const DIM: usize;

    fn joint_count(&self) -> usize;

    fn coords(&self) -> &[f64];

    /// Negate `x` and swap left/right joints.
    fn flipped(&self, skel: &Skeleton) -> Self;

    fn check(&self, joints: usize) -> Result<()> {
        if self.joint_count() != joints {
            return Err(Error::shape(
                format!("{joints}x{}", Self::DIM),
                format!("{}x{}", self.joint_count(), Self::DIM),
            ));
        }
        if self.coords().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPose("non-finite coordinate".into()));
        }
        Ok(())
    }
}

fn flip_rows<const D: usize>(rows: &[[f64; D]], skel: &Skeleton) -> Vec<[f64; D]> {
    let mut out = vec![[0.0; D]; rows.len()];
    for (j, row) in rows.iter().enumerate() {
        let mut r = *row;
        r[0] = -r[0];
        out[skel.flipped_index(j)] = r;
    }
    out
}

impl Pose for Pose2D {
    const DIM: usize = 2;

    fn joint_count(&self) -> usize {
        self.0.len()
    }

    fn coords(&self) -> &[f64] {
        self.0.as_flattened()
    }

    fn flipped(&self, skel: &Skeleton) -> Self {
        Pose2D(flip_rows(&self.0, skel))
    }
}

impl Pose for Pose3D {
    const DIM: usize = 3;

    fn joint_count(&self) -> usize {
        self.0.len()
    }

    fn coords(&self) -> &[f64] {
        self.0.as_flattened()
    }

    fn flipped(&self, skel: &Skeleton) -> Self {
        Pose3D(flip_rows(&self.0, skel))
    }
}

impl Pose3D {
    pub fn zeros(joints: usize) -> Self {
        Pose3D(vec![[0.0; 3]; joints])
    }

    /// Row-major `J*3` copy.
    pub fn to_flat(&self) -> Vec<f64> {
        self.coords().to_vec()
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        Pose3D(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn translated(&self, t: [f64; 3]) -> Self {
        Pose3D(
            self.0
                .iter()
                .map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])
                .collect(),
        )
    }

    /// Linear blend `(1 - w) * self + w * other`.
    pub fn lerp(&self, other: &Pose3D, w: f64) -> Pose3D {
        Pose3D(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| {
                    [
                        a[0] + w * (b[0] - a[0]),
                        a[1] + w * (b[1] - a[1]),
                        a[2] + w * (b[2] - a[2]),
                    ]
                })
                .collect(),
        )
    }
}

impl Pose2D {
    pub fn to_flat(&self) -> Vec<f64> {
        self.coords().to_vec()
    }
}

/// Horizontal flip of a 2D or 3D pose.
pub fn horizontal_flip<P: Pose>(pose: &P, skel: &Skeleton) -> Result<P> {
    if pose.joint_count() != skel.joint_count() {
        return Err(Error::shape(skel.joint_count(), pose.joint_count()));
    }
    Ok(pose.flipped(skel))
}

/// Subtract the root joint from every joint; the root row becomes zero.
pub fn root_relative(pose: &Pose3D, skel: &Skeleton) -> Pose3D {
    let r = pose.0[skel.root()];
    Pose3D(
        pose.0
            .iter()
            .map(|p| [p[0] - r[0], p[1] - r[1], p[2] - r[2]])
            .collect(),
    )
}

/// Ordered frames sampled at `frame_rate` Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSequence<P> {
    pub frames: Vec<P>,
    pub frame_rate: f64,
}

pub type PoseSequence2D = PoseSequence<Pose2D>;
pub type PoseSequence3D = PoseSequence<Pose3D>;

impl<P: Pose> PoseSequence<P> {
    pub fn new(frames: Vec<P>, frame_rate: f64) -> Result<Self> {
        if !(frame_rate > 0.0 && frame_rate.is_finite()) {
            return Err(Error::Config(format!("frame rate {frame_rate} must be > 0")));
        }
        if let Some(first) = frames.first() {
            let j = first.joint_count();
            for f in &frames {
                f.check(j)?;
            }
        }
        Ok(PoseSequence { frames, frame_rate })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joint_count(&self) -> usize {
        self.frames.first().map_or(0, |f| f.joint_count())
    }

    pub fn flipped(&self, skel: &Skeleton) -> Self {
        PoseSequence {
            frames: self.frames.iter().map(|f| f.flipped(skel)).collect(),
            frame_rate: self.frame_rate,
        }
    }
}
