use super::{root_relative, Pose3D, PoseSequence3D, Skeleton};
use crate::error::{Error, Result};

/// Linear interpolation of key poses placed every `stride` frames (key `k`
/// sits at frame `k * stride`) to a dense sequence of `target_len` frames.
///
/// Frames after the last key replicate it.
pub fn bilinear_upsample(keys: &[Pose3D], stride: usize, target_len: usize) -> Result<Vec<Pose3D>> {
    if keys.is_empty() {
        return Err(Error::EmptyInput("no key poses to interpolate".into()));
    }
    if stride == 0 {
        return Err(Error::Config("interpolation stride must be >= 1".into()));
    }
    let last = keys.len() - 1;
    Ok((0..target_len)
        .map(|t| {
            let k0 = t / stride;
            if k0 >= last {
                return keys[last].clone();
            }
            let offset = t - k0 * stride;
            if offset == 0 {
                keys[k0].clone()
            } else {
                keys[k0].lerp(&keys[k0 + 1], offset as f64 / stride as f64)
            }
        })
        .collect())
}

/// Sequence form of [`bilinear_upsample`]; `sparse.frame_rate` is the rate of
/// the key poses, the result runs at `stride` times that.
pub fn bilinear_upsample_sequence(
    sparse: &PoseSequence3D,
    stride: usize,
    target_len: usize,
) -> Result<PoseSequence3D> {
    Ok(PoseSequence3D {
        frames: bilinear_upsample(&sparse.frames, stride, target_len)?,
        frame_rate: sparse.frame_rate * stride as f64,
    })
}

fn mean_root_relative_displacement(a: &Pose3D, b: &Pose3D, skel: &Skeleton) -> f64 {
    let ra = root_relative(a, skel);
    let rb = root_relative(b, skel);
    let sum: f64 = ra
        .0
        .iter()
        .zip(&rb.0)
        .map(|(p, q)| {
            let d = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
        })
        .sum();
    sum / a.0.len() as f64
}

/// Average root-relative joint speed per frame in m/s (poses in mm).
/// Frame 0 has no predecessor and takes the value of frame 1.
pub fn pose_velocity(seq: &PoseSequence3D, skel: &Skeleton) -> Result<Vec<f64>> {
    if seq.len() < 2 {
        return Err(Error::EmptyInput(
            "pose velocity needs at least two frames".into(),
        ));
    }
    if seq.joint_count() != skel.joint_count() {
        return Err(Error::shape(skel.joint_count(), seq.joint_count()));
    }
    let mut v = Vec::with_capacity(seq.len());
    v.push(0.0);
    for w in seq.frames.windows(2) {
        v.push(mean_root_relative_displacement(&w[1], &w[0], skel) * seq.frame_rate / 1000.0);
    }
    v[0] = v[1];
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(x: f64) -> Pose3D {
        Pose3D(vec![[x, 2.0 * x, -x]])
    }

    #[test]
    fn interpolation_weights() {
        let keys = [p(0.0), p(4.0)];
        let out = bilinear_upsample(&keys, 4, 5).unwrap();
        assert_eq!(out[2], p(2.0));
        assert_eq!(out[4], p(4.0));
        assert_eq!(out[1], p(1.0));
        assert_eq!(out[0], p(0.0));
    }

    #[test]
    fn tail_replicates_last_key() {
        let keys = [p(0.0), p(4.0)];
        let out = bilinear_upsample(&keys, 4, 8).unwrap();
        assert_eq!(out[7], p(4.0));
        assert!(bilinear_upsample(&[], 2, 3).is_err());
    }

    #[test]
    fn velocity_examples() {
        let skel = Skeleton::chain(2, vec![]).unwrap();
        let frames: Vec<Pose3D> = (0..5)
            .map(|t| Pose3D(vec![[0.0; 3], [10.0 * t as f64, 0.0, 0.0]]))
            .collect();
        let seq = PoseSequence3D::new(frames, 50.0).unwrap();
        let v = pose_velocity(&seq, &skel).unwrap();
        // (1/2) * 10 mm * 50 Hz = 250 mm/s
        for x in v {
            assert!((x - 0.25).abs() < 1e-12);
        }

        let static_seq = PoseSequence3D::new(vec![Pose3D::zeros(2); 3], 50.0).unwrap();
        assert_eq!(pose_velocity(&static_seq, &skel).unwrap(), vec![0.0; 3]);

        let rigid = PoseSequence3D::new(
            (0..4)
                .map(|t| Pose3D(vec![[t as f64 * 7.0, 1.0, 2.0], [t as f64 * 7.0 + 5.0, 1.0, 2.0]]))
                .collect(),
            50.0,
        )
        .unwrap();
        assert!(pose_velocity(&rigid, &skel).unwrap().iter().all(|v| *v < 1e-12));

        let single = PoseSequence3D::new(vec![Pose3D::zeros(2)], 50.0).unwrap();
        assert!(pose_velocity(&single, &skel).is_err());
    }

    proptest! {
        #[test]
        fn affine_motion_is_reproduced(
            a in prop::array::uniform3(-100.0f64..100.0),
            b in prop::array::uniform3(-10.0f64..10.0),
            stride in 1usize..12,
            keys in 2usize..8,
        ) {
            let at = |t: f64| Pose3D(vec![[a[0] + b[0] * t, a[1] + b[1] * t, a[2] + b[2] * t]]);
            let key_poses: Vec<_> = (0..keys).map(|k| at((k * stride) as f64)).collect();
            let len = (keys - 1) * stride + 1;
            let out = bilinear_upsample(&key_poses, stride, len).unwrap();
            for (t, pose) in out.iter().enumerate() {
                let want = at(t as f64);
                for d in 0..3 {
                    prop_assert!((pose.0[0][d] - want.0[0][d]).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn velocity_translation_invariant(
            shift in prop::array::uniform3(-1e3f64..1e3),
            coords in prop::collection::vec(prop::array::uniform3(-500.0f64..500.0), 12),
        ) {
            let skel = Skeleton::chain(3, vec![]).unwrap();
            let frames: Vec<Pose3D> = coords.chunks(3).map(|c| Pose3D(c.to_vec())).collect();
            let seq = PoseSequence3D::new(frames.clone(), 25.0).unwrap();
            let moved = PoseSequence3D::new(frames.iter().map(|f| f.translated(shift)).collect(), 25.0).unwrap();
            let a = pose_velocity(&seq, &skel).unwrap();
            let b = pose_velocity(&moved, &skel).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
