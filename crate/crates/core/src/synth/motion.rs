use std::f64::consts::PI;

use nalgebra::{Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose3D, PoseSequence3D, Skeleton};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionKind {
    SinusoidalLimbs,
    SmoothRandomWalk,
    Burst,
}

impl std::str::FromStr for MotionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinusoidal-limbs" => Ok(MotionKind::SinusoidalLimbs),
            "smooth-random-walk" => Ok(MotionKind::SmoothRandomWalk),
            "burst" => Ok(MotionKind::Burst),
            _ => Err(Error::Config(format!("unknown motion kind `{s}`"))),
        }
    }
}

/// Parameters of one synthetic clip.
///
/// `amplitude_mm` is the peak of the mean root-relative joint displacement,
/// so a sinusoidal clip reaches a peak pose velocity of
/// `2 pi frequency amplitude`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    pub kind: MotionKind,
    pub frames: usize,
    pub frame_rate: f64,
    pub amplitude_mm: f64,
    pub frequency_hz: f64,
    pub seed: u64,
}

impl MotionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::Config("motion needs at least one frame".into()));
        }
        if !(self.frame_rate > 0.0) || !self.frame_rate.is_finite() {
            return Err(Error::Config("frame rate must be positive".into()));
        }
        if !(self.amplitude_mm >= 0.0) || !self.amplitude_mm.is_finite() {
            return Err(Error::Config("amplitude must be non-negative".into()));
        }
        if !(self.frequency_hz > 0.0) || !self.frequency_hz.is_finite() {
            return Err(Error::Config("frequency must be positive".into()));
        }
        Ok(())
    }
}

/// One constant-frequency stretch of a burst clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstSegment {
    pub start: usize,
    pub end: usize,
    pub frequency_hz: f64,
    pub peak_velocity_mps: f64,
}

/// Rest pose in millimetres: x right, y down, z away from the viewer,
/// pelvis at the origin, facing `-z`.
pub fn h36m_rest_pose() -> Pose3D {
    Pose3D(vec![
        [0.0, 0.0, 0.0],
        [-130.0, 0.0, 0.0],
        [-135.0, 440.0, -80.0],
        [-135.0, 870.0, 20.0],
        [130.0, 0.0, 0.0],
        [135.0, 440.0, -80.0],
        [135.0, 870.0, 20.0],
        [0.0, -230.0, 10.0],
        [0.0, -480.0, 0.0],
        [0.0, -580.0, -60.0],
        [0.0, -690.0, -20.0],
        [160.0, -460.0, 0.0],
        [170.0, -190.0, 40.0],
        [165.0, 30.0, -110.0],
        [-160.0, -460.0, 0.0],
        [-170.0, -190.0, 40.0],
        [-165.0, 30.0, -110.0],
    ])
}

/// Rest pose for `skel`: the built-in table for 17-joint skeletons,
/// otherwise a fan of 100 mm bones derived from the parent list.
pub fn rest_pose(skel: &Skeleton) -> Result<Pose3D> {
    let parents = skel
        .parents()
        .ok_or_else(|| Error::InvalidSkeleton("motion synthesis needs a parent list".into()))?;
    if skel.joint_count() == 17 && skel.name().starts_with("h36m") {
        return Ok(h36m_rest_pose());
    }
    let mut pose = vec![[0.0; 3]; skel.joint_count()];
    let mut done = vec![false; skel.joint_count()];
    done[skel.root()] = true;
    // parents may be listed after children; iterate to a fixed point
    for _ in 0..skel.joint_count() {
        for j in 0..skel.joint_count() {
            if let (false, Some(p)) = (done[j], parents[j]) {
                if done[p] {
                    let a = 0.7 * j as f64;
                    pose[j] = [
                        pose[p][0] + 100.0 * a.sin() * 0.6,
                        pose[p][1] + 80.0,
                        pose[p][2] + 100.0 * a.cos() * 0.3,
                    ];
                    done[j] = true;
                }
            }
        }
    }
    if done.iter().any(|d| !d) {
        return Err(Error::InvalidSkeleton("parent list is not a tree".into()));
    }
    Ok(Pose3D(pose))
}

#[derive(Debug, Clone)]
struct Rig {
    pivot: usize,
    members: Vec<usize>,
    axis: Unit<Vector3<f64>>,
    sign: f64,
}

fn descendants(parents: &[Option<usize>], j: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut stack = vec![j];
    while let Some(k) = stack.pop() {
        for (c, p) in parents.iter().enumerate() {
            if *p == Some(k) {
                out.push(c);
                stack.push(c);
            }
        }
    }
    out.sort_unstable();
    out
}

/// Limb pivots: joints hanging off a branch point that carry a subtree,
/// keeping only the innermost so limbs do not nest.
fn limb_pivots(skel: &Skeleton) -> Vec<usize> {
    let parents = skel.parents().expect("checked by rest_pose");
    let children = |j: usize| parents.iter().filter(|p| **p == Some(j)).count();
    let mut pivots: Vec<usize> = (0..skel.joint_count())
        .filter(|&j| {
            parents[j].is_some_and(|p| children(p) >= 2 || p == skel.root()) && children(j) >= 1
        })
        .collect();
    let nested: Vec<usize> = pivots
        .iter()
        .copied()
        .filter(|&j| {
            let d = descendants(parents, j);
            pivots.iter().any(|q| d.contains(q))
        })
        .collect();
    pivots.retain(|j| !nested.contains(j));
    pivots
}

fn build_rig(skel: &Skeleton, rng: &mut ChaCha8Rng) -> Vec<Rig> {
    let parents = skel.parents().expect("checked by rest_pose");
    limb_pivots(skel)
        .into_iter()
        .enumerate()
        .map(|(i, pivot)| {
            let psi: f64 = rng.random_range(-0.6..0.6);
            let axis = Unit::new_normalize(Vector3::new(psi.cos(), 0.0, psi.sin()));
            // paired limbs swing in opposite phase
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            Rig {
                pivot,
                members: descendants(parents, pivot),
                axis,
                sign,
            }
        })
        .collect()
}

fn distance_to_axis(p: [f64; 3], pivot: [f64; 3], axis: &Unit<Vector3<f64>>) -> f64 {
    let d = Vector3::new(p[0] - pivot[0], p[1] - pivot[1], p[2] - pivot[2]);
    (d - axis.as_ref() * d.dot(axis)).norm()
}

/// Angle gain turning a common swing angle into a mean joint displacement
/// of one millimetre per radian.
fn gain(rest: &Pose3D, rig: &[Rig]) -> f64 {
    let total: f64 = rig
        .iter()
        .flat_map(|r| {
            r.members
                .iter()
                .map(move |&m| distance_to_axis(rest.0[m], rest.0[r.pivot], &r.axis))
        })
        .sum();
    rest.0.len() as f64 / total.max(1e-9)
}

fn pose_at(rest: &Pose3D, rig: &[Rig], angles: &[f64]) -> Pose3D {
    let mut pose = rest.clone();
    for (r, &theta) in rig.iter().zip(angles) {
        let rot = Rotation3::from_axis_angle(&r.axis, theta * r.sign);
        let c = Vector3::from(rest.0[r.pivot]);
        for &m in &r.members {
            let p = rot * (Vector3::from(rest.0[m]) - c) + c;
            pose.0[m] = [p.x, p.y, p.z];
        }
    }
    pose
}

/// Segment boundaries and frequencies of a burst clip.
pub fn burst_segments(spec: &MotionSpec) -> Vec<BurstSegment> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xB0B5_7000);
    let mut out = Vec::new();
    let mut start = 0;
    let mut fast = false;
    let min_len = (spec.frame_rate as usize).max(4);
    while start < spec.frames {
        let len = rng.random_range(min_len..=3 * min_len);
        let end = (start + len).min(spec.frames);
        let f = if fast { spec.frequency_hz } else { 0.15 * spec.frequency_hz };
        out.push(BurstSegment {
            start,
            end,
            frequency_hz: f,
            peak_velocity_mps: 2.0 * PI * f * spec.amplitude_mm / 1000.0,
        });
        start = end;
        fast = !fast;
    }
    out
}

/// Closed-form peak of the pose velocity of a sinusoidal clip, m/s.
pub fn sinusoidal_peak_velocity(spec: &MotionSpec) -> f64 {
    2.0 * PI * spec.frequency_hz * spec.amplitude_mm / 1000.0
}

/// Body-frame motion (pelvis at the origin) for `spec` on `skel`.
/// Limbs swing rigidly about their pivots, so bone lengths are constant.
pub fn generate_motion(spec: &MotionSpec, skel: &Skeleton) -> Result<PoseSequence3D> {
    spec.validate()?;
    let rest = rest_pose(skel)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rig = build_rig(skel, &mut rng);
    if rig.is_empty() {
        return Err(Error::InvalidSkeleton("skeleton has no movable limb".into()));
    }
    let alpha = spec.amplitude_mm * gain(&rest, &rig);
    let w = 2.0 * PI * spec.frequency_hz;
    let fr = spec.frame_rate;
    let phase0: f64 = rng.random_range(0.0..2.0 * PI);

    let angles: Vec<Vec<f64>> = match spec.kind {
        MotionKind::SinusoidalLimbs => (0..spec.frames)
            .map(|t| vec![alpha * (w * t as f64 / fr + phase0).sin(); rig.len()])
            .collect(),
        MotionKind::SmoothRandomWalk => {
            let comps: Vec<Vec<(f64, f64, f64)>> = rig
                .iter()
                .map(|_| {
                    let raw: Vec<(f64, f64, f64)> = (0..3)
                        .map(|_| {
                            (
                                rng.random_range(0.2..1.0),
                                rng.random_range(0.3..1.5) * w,
                                rng.random_range(0.0..2.0 * PI),
                            )
                        })
                        .collect();
                    let s: f64 = raw.iter().map(|c| c.0).sum();
                    raw.into_iter().map(|(a, f, p)| (a / s, f, p)).collect()
                })
                .collect();
            (0..spec.frames)
                .map(|t| {
                    let x = t as f64 / fr;
                    comps
                        .iter()
                        .map(|c| alpha * c.iter().map(|(a, f, p)| a * (f * x + p).sin()).sum::<f64>())
                        .collect()
                })
                .collect()
        }
        MotionKind::Burst => {
            let segs = burst_segments(spec);
            let mut phase = phase0;
            let mut out = Vec::with_capacity(spec.frames);
            for seg in &segs {
                for _ in seg.start..seg.end {
                    out.push(vec![alpha * phase.sin(); rig.len()]);
                    phase += 2.0 * PI * seg.frequency_hz / fr;
                }
            }
            out
        }
    };
    let frames = angles.iter().map(|a| pose_at(&rest, &rig, a)).collect();
    PoseSequence3D::new(frames, fr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pose_velocity;

    fn spec(kind: MotionKind, amp: f64) -> MotionSpec {
        MotionSpec {
            kind,
            frames: 400,
            frame_rate: 50.0,
            amplitude_mm: amp,
            frequency_hz: 1.0,
            seed: 11,
        }
    }

    fn bone_lengths(p: &Pose3D, skel: &Skeleton) -> Vec<f64> {
        skel.bones()
            .iter()
            .map(|&(a, b)| {
                let d: f64 = (0..3).map(|k| (p.0[a][k] - p.0[b][k]).powi(2)).sum();
                d.sqrt()
            })
            .collect()
    }

    #[test]
    fn pivots_of_h36m() {
        assert_eq!(limb_pivots(&Skeleton::h36m()), vec![1, 4, 9, 11, 14]);
    }

    #[test]
    fn static_when_amplitude_is_zero() {
        let skel = Skeleton::h36m();
        let seq = generate_motion(&spec(MotionKind::SinusoidalLimbs, 0.0), &skel).unwrap();
        assert!(pose_velocity(&seq, &skel).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn deterministic_and_rigid() {
        let skel = Skeleton::h36m();
        for kind in [MotionKind::SinusoidalLimbs, MotionKind::SmoothRandomWalk, MotionKind::Burst] {
            let a = generate_motion(&spec(kind, 80.0), &skel).unwrap();
            let b = generate_motion(&spec(kind, 80.0), &skel).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), 400);
            let l0 = bone_lengths(&a.frames[0], &skel);
            for f in &a.frames {
                for (x, y) in bone_lengths(f, &skel).iter().zip(&l0) {
                    assert!((x - y).abs() <= 1e-6 * y);
                }
            }
        }
    }

    #[test]
    fn sinusoidal_peak_speed_matches_closed_form() {
        let skel = Skeleton::h36m();
        let s = spec(MotionKind::SinusoidalLimbs, 60.0);
        let seq = generate_motion(&s, &skel).unwrap();
        let peak = pose_velocity(&seq, &skel).unwrap().into_iter().fold(0.0, f64::max);
        let want = sinusoidal_peak_velocity(&s);
        assert!((peak - want).abs() < 0.02 * want, "{peak} vs {want}");
    }

    #[test]
    fn burst_segments_alternate_speed() {
        let s = spec(MotionKind::Burst, 60.0);
        let segs = burst_segments(&s);
        assert!(segs.len() >= 2);
        assert_eq!(segs.last().unwrap().end, 400);
        assert!(segs[1].peak_velocity_mps > 5.0 * segs[0].peak_velocity_mps);
        let skel = Skeleton::h36m();
        let v = pose_velocity(&generate_motion(&s, &skel).unwrap(), &skel).unwrap();
        for seg in &segs {
            let peak = v[seg.start + 1..seg.end].iter().copied().fold(0.0, f64::max);
            assert!(peak <= seg.peak_velocity_mps * 1.02 + 1e-9);
        }
    }
}
