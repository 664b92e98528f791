//! Pose error metrics: MPJPE and its scale/similarity-aligned variants,
//! PCK/AUC, and MPJPE binned by ground-truth pose velocity.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pose_velocity, root_relative, Pose, Pose3D, PoseSequence3D, Skeleton};

pub const DEFAULT_PCK_THRESHOLD_MM: f64 = 150.0;
pub const DEFAULT_VELOCITY_BIN_WIDTH: f64 = 0.1;

/// 5, 10, ..., 150 mm.
pub fn default_auc_thresholds() -> Vec<f64> {
    (1..=30).map(|i| 5.0 * i as f64).collect()
}

fn check_pair(pred: &Pose3D, gt: &Pose3D, skel: &Skeleton) -> Result<()> {
    gt.check(skel.joint_count())?;
    pred.check(skel.joint_count())
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Root-relative Euclidean error of every joint.
pub fn joint_errors(pred: &Pose3D, gt: &Pose3D, skel: &Skeleton) -> Result<Vec<f64>> {
    check_pair(pred, gt, skel)?;
    let p = root_relative(pred, skel);
    let g = root_relative(gt, skel);
    Ok(p.0.iter().zip(&g.0).map(|(a, b)| dist(a, b)).collect())
}

/// Mean per-joint position error after root alignment, in mm.
pub fn mpjpe(pred: &Pose3D, gt: &Pose3D, skel: &Skeleton) -> Result<f64> {
    let e = joint_errors(pred, gt, skel)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

/// MPJPE after the least-squares optimal scaling of the root-relative
/// prediction. A zero prediction falls back to plain MPJPE.
pub fn n_mpjpe(pred: &Pose3D, gt: &Pose3D, skel: &Skeleton) -> Result<f64> {
    check_pair(pred, gt, skel)?;
    let p = root_relative(pred, skel);
    let g = root_relative(gt, skel);
    let pp: f64 = p.coords().iter().map(|v| v * v).sum();
    if pp == 0.0 {
        return mpjpe(pred, gt, skel);
    }
    let pg: f64 = p.coords().iter().zip(g.coords()).map(|(a, b)| a * b).sum();
    let s = pg / pp;
    let e: f64 = p
        .0
        .iter()
        .zip(&g.0)
        .map(|(a, b)| dist(&[a[0] * s, a[1] * s, a[2] * s], b))
        .sum();
    Ok(e / p.0.len() as f64)
}

/// Optimal similarity transform mapping `pred` onto `gt`.
#[derive(Debug, Clone, Copy)]
pub struct Similarity {
    pub rotation: Matrix3<f64>,
    pub scale: f64,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: &[f64; 3]) -> [f64; 3] {
        let v = self.rotation * Vector3::new(p[0], p[1], p[2]) * self.scale + self.translation;
        [v.x, v.y, v.z]
    }
}

fn centered(pose: &Pose3D) -> (Vec<Vector3<f64>>, Vector3<f64>) {
    let n = pose.0.len() as f64;
    let mean = pose
        .0
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + Vector3::new(p[0], p[1], p[2]))
        / n;
    let pts = pose
        .0
        .iter()
        .map(|p| Vector3::new(p[0], p[1], p[2]) - mean)
        .collect();
    (pts, mean)
}

fn cloud_rank_ok(pts: &[Vector3<f64>]) -> bool {
    let cov = pts.iter().fold(Matrix3::zeros(), |acc, p| acc + p * p.transpose());
    let sv = cov.symmetric_eigenvalues();
    let mut s: Vec<f64> = sv.iter().map(|v| v.abs()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s[0] > 0.0 && s[1] > 1e-12 * s[0]
}

/// Orthogonal Procrustes with scale; the rotation is forced proper.
pub fn procrustes(pred: &Pose3D, gt: &Pose3D) -> Result<Similarity> {
    if pred.0.len() != gt.0.len() {
        return Err(Error::shape(gt.0.len(), pred.0.len()));
    }
    if pred.0.len() < 3 {
        return Err(Error::AlignmentDegenerate("fewer than 3 joints".into()));
    }
    let (xp, mp) = centered(pred);
    let (xg, mg) = centered(gt);
    if !cloud_rank_ok(&xp) || !cloud_rank_ok(&xg) {
        return Err(Error::AlignmentDegenerate(
            "joint cloud has rank < 2".into(),
        ));
    }
    // H = sum p g^T; the rotation maps pred onto gt.
    let h = xp
        .iter()
        .zip(&xg)
        .fold(Matrix3::zeros(), |acc, (p, g)| acc + p * g.transpose());
    let svd = h.svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v requested");
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = v * correction * u.transpose();
    let sigma = svd.singular_values;
    let trace = sigma[0] + sigma[1] + d * sigma[2];
    let norm_p: f64 = xp.iter().map(|p| p.norm_squared()).sum();
    let scale = trace / norm_p;
    let translation = mg - rotation * mp * scale;
    Ok(Similarity {
        rotation,
        scale,
        translation,
    })
}

/// MPJPE after similarity (Procrustes) alignment of prediction to ground truth.
pub fn p_mpjpe(pred: &Pose3D, gt: &Pose3D, skel: &Skeleton) -> Result<f64> {
    check_pair(pred, gt, skel)?;
    let sim = procrustes(pred, gt)?;
    let e: f64 = pred
        .0
        .iter()
        .zip(&gt.0)
        .map(|(p, g)| dist(&sim.apply(p), g))
        .sum();
    Ok(e / pred.0.len() as f64)
}

fn all_joint_errors(pred: &[Pose3D], gt: &[Pose3D], skel: &Skeleton) -> Result<Vec<f64>> {
    if pred.len() != gt.len() {
        return Err(Error::shape(
            format!("{} frames", gt.len()),
            format!("{} frames", pred.len()),
        ));
    }
    let root = skel.root();
    let mut out = Vec::with_capacity(pred.len() * skel.joint_count());
    for (p, g) in pred.iter().zip(gt) {
        let e = joint_errors(p, g, skel)?;
        out.extend(e.into_iter().enumerate().filter(|&(j, _)| j != root).map(|(_, v)| v));
    }
    Ok(out)
}

fn pck_of(errors: &[f64], threshold: f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    let hits = errors.iter().filter(|&&e| e < threshold).count();
    100.0 * hits as f64 / errors.len() as f64
}

/// Percentage of (frame, joint) pairs with root-relative error below
/// `threshold_mm`. The root joint is excluded since its error is always zero.
pub fn pck(pred: &[Pose3D], gt: &[Pose3D], skel: &Skeleton, threshold_mm: f64) -> Result<f64> {
    Ok(pck_of(&all_joint_errors(pred, gt, skel)?, threshold_mm))
}

/// Mean PCK over `thresholds` (see [`default_auc_thresholds`]).
pub fn auc(pred: &[Pose3D], gt: &[Pose3D], skel: &Skeleton, thresholds: &[f64]) -> Result<f64> {
    if thresholds.is_empty() {
        return Err(Error::EmptyInput("no AUC thresholds".into()));
    }
    let errors = all_joint_errors(pred, gt, skel)?;
    Ok(thresholds.iter().map(|&t| pck_of(&errors, t)).sum::<f64>() / thresholds.len() as f64)
}

/// One velocity interval `[low, high)` of the MPJPE-vs-velocity analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityBin {
    pub low: f64,
    pub high: f64,
    /// `None` for an empty bin.
    pub mean_mpjpe: Option<f64>,
    pub count: usize,
    /// Fraction of frames with velocity below `high`.
    pub cdf: f64,
}

impl VelocityBin {
    pub fn is_populated(&self) -> bool {
        self.count > 0
    }
}

/// Per-frame MPJPE grouped by the ground-truth pose velocity. Bins are
/// contiguous from zero up to the fastest frame, empty ones included.
pub fn mpjpe_by_velocity(
    pred: &[Pose3D],
    gt: &PoseSequence3D,
    skel: &Skeleton,
    bin_width: f64,
) -> Result<Vec<VelocityBin>> {
    if !(bin_width > 0.0) {
        return Err(Error::Config("velocity bin width must be > 0".into()));
    }
    if pred.len() != gt.len() {
        return Err(Error::shape(gt.len(), pred.len()));
    }
    let vel = pose_velocity(gt, skel)?;
    let errors = pred
        .iter()
        .zip(&gt.frames)
        .map(|(p, g)| mpjpe(p, g, skel))
        .collect::<Result<Vec<_>>>()?;
    Ok(bin_by_velocity(&vel, &errors, bin_width))
}

pub(crate) fn bin_by_velocity(vel: &[f64], errors: &[f64], bin_width: f64) -> Vec<VelocityBin> {
    if vel.is_empty() {
        return Vec::new();
    }
    let index = |v: f64| (v / bin_width).floor().max(0.0) as usize;
    let bins = vel.iter().map(|&v| index(v)).max().unwrap_or(0) + 1;
    let mut sums = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    for (&v, &e) in vel.iter().zip(errors) {
        let b = index(v);
        sums[b] += e;
        counts[b] += 1;
    }
    let total = vel.len() as f64;
    let mut cumulative = 0usize;
    (0..bins)
        .map(|b| {
            cumulative += counts[b];
            VelocityBin {
                low: b as f64 * bin_width,
                high: (b + 1) as f64 * bin_width,
                mean_mpjpe: (counts[b] > 0).then(|| sums[b] / counts[b] as f64),
                count: counts[b],
                cdf: cumulative as f64 / total,
            }
        })
        .collect()
}

/// Error of one frame under every metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameError {
    pub frame: usize,
    pub mpjpe: f64,
    pub n_mpjpe: f64,
    pub p_mpjpe: f64,
    pub velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub frames: usize,
    pub mpjpe_mm: f64,
    pub n_mpjpe_mm: f64,
    pub p_mpjpe_mm: f64,
    pub pck_percent: f64,
    pub auc_percent: f64,
    pub per_frame_errors: Vec<FrameError>,
    pub velocity_histogram: Vec<VelocityBin>,
}

#[derive(Debug, Clone, Copy)]
struct Sums {
    frames: usize,
    mpjpe: f64,
    n: f64,
    p: f64,
}

impl MetricsReport {
    /// Evaluate a dense prediction against ground truth, frame by frame.
    /// Single-frame sequences get a zero velocity.
    pub fn compute(
        pred: &[Pose3D],
        gt: &PoseSequence3D,
        skel: &Skeleton,
        bin_width: f64,
    ) -> Result<Self> {
        Self::compute_many(&[(pred, gt)], skel, bin_width)
    }

    /// Pool several sequences into one report; frame ids are global offsets.
    pub fn compute_many(
        pairs: &[(&[Pose3D], &PoseSequence3D)],
        skel: &Skeleton,
        bin_width: f64,
    ) -> Result<Self> {
        let mut per_frame = Vec::new();
        let mut all_pred = Vec::new();
        let mut all_gt = Vec::new();
        let mut sums = Sums {
            frames: 0,
            mpjpe: 0.0,
            n: 0.0,
            p: 0.0,
        };
        for (pred, gt) in pairs {
            if pred.len() != gt.len() {
                return Err(Error::shape(gt.len(), pred.len()));
            }
            let vel = if gt.len() >= 2 {
                pose_velocity(gt, skel)?
            } else {
                vec![0.0; gt.len()]
            };
            for (t, (p, g)) in pred.iter().zip(&gt.frames).enumerate() {
                let m = mpjpe(p, g, skel)?;
                let n = n_mpjpe(p, g, skel)?;
                let pm = match p_mpjpe(p, g, skel) {
                    Ok(v) => v,
                    Err(Error::AlignmentDegenerate(_)) => n,
                    Err(e) => return Err(e),
                };
                per_frame.push(FrameError {
                    frame: sums.frames + t,
                    mpjpe: m,
                    n_mpjpe: n,
                    p_mpjpe: pm,
                    velocity: vel[t],
                });
            }
            sums.frames += gt.len();
            all_pred.extend_from_slice(pred);
            all_gt.extend_from_slice(&gt.frames);
        }
        if sums.frames == 0 {
            return Err(Error::EmptyInput("no frames to evaluate".into()));
        }
        for f in &per_frame {
            sums.mpjpe += f.mpjpe;
            sums.n += f.n_mpjpe;
            sums.p += f.p_mpjpe;
        }
        let k = sums.frames as f64;
        let vel: Vec<f64> = per_frame.iter().map(|f| f.velocity).collect();
        let errs: Vec<f64> = per_frame.iter().map(|f| f.mpjpe).collect();
        Ok(MetricsReport {
            frames: sums.frames,
            mpjpe_mm: sums.mpjpe / k,
            n_mpjpe_mm: sums.n / k,
            p_mpjpe_mm: sums.p / k,
            pck_percent: pck(&all_pred, &all_gt, skel, DEFAULT_PCK_THRESHOLD_MM)?,
            auc_percent: auc(&all_pred, &all_gt, skel, &default_auc_thresholds())?,
            per_frame_errors: per_frame,
            velocity_histogram: bin_by_velocity(&vel, &errs, bin_width),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_joint(offset: [f64; 3]) -> (Pose3D, Pose3D) {
        let gt = Pose3D(vec![[0.0, 0.0, 0.0], [100.0, 50.0, 0.0]]);
        let mut pred = gt.clone();
        pred.0[1] = [100.0 + offset[0], 50.0 + offset[1], offset[2]];
        (pred, gt)
    }

    #[test]
    fn mpjpe_examples() {
        let skel = Skeleton::chain(2, vec![]).unwrap();
        let (pred, gt) = two_joint([30.0, 0.0, 0.0]);
        assert_eq!(mpjpe(&gt, &gt, &skel).unwrap(), 0.0);
        assert_eq!(mpjpe(&gt.translated([3.0, 4.0, 5.0]), &gt, &skel).unwrap(), 0.0);
        assert_eq!(mpjpe(&pred, &gt, &skel).unwrap(), 15.0);
        assert!(mpjpe(&Pose3D::zeros(3), &gt, &skel).is_err());
    }

    #[test]
    fn n_mpjpe_removes_scale() {
        let skel = Skeleton::chain(3, vec![]).unwrap();
        let gt = Pose3D(vec![[0.0; 3], [100.0, 20.0, 5.0], [-30.0, 80.0, 40.0]]);
        let doubled = Pose3D(gt.0.iter().map(|p| [2.0 * p[0], 2.0 * p[1], 2.0 * p[2]]).collect());
        assert!(n_mpjpe(&doubled, &gt, &skel).unwrap() < 1e-12);
        assert_eq!(n_mpjpe(&gt, &gt, &skel).unwrap(), mpjpe(&gt, &gt, &skel).unwrap());
        // zero prediction falls back to MPJPE
        let zero = Pose3D::zeros(3);
        assert_eq!(n_mpjpe(&zero, &gt, &skel).unwrap(), mpjpe(&zero, &gt, &skel).unwrap());
    }

    #[test]
    fn p_mpjpe_rejects_degenerate_clouds() {
        let skel = Skeleton::chain(3, vec![]).unwrap();
        let line = Pose3D(vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let err = p_mpjpe(&line, &line, &skel).unwrap_err();
        assert!(matches!(err, Error::AlignmentDegenerate(_)));
    }

    #[test]
    fn pck_auc_examples() {
        let skel = Skeleton::chain(5, vec![]).unwrap();
        let gt = vec![Pose3D(vec![
            [0.0; 3],
            [10.0, 0.0, 0.0],
            [0.0, 10.0, 0.0],
            [0.0, 0.0, 10.0],
            [5.0, 5.0, 0.0],
        ])];
        assert_eq!(pck(&gt, &gt, &skel, 150.0).unwrap(), 100.0);
        assert_eq!(auc(&gt, &gt, &skel, &default_auc_thresholds()).unwrap(), 100.0);

        let mut half = gt.clone();
        half[0].0[1][0] += 100.0;
        half[0].0[2][1] += 100.0;
        half[0].0[3][2] += 200.0;
        half[0].0[4][0] -= 200.0;
        assert_eq!(pck(&half, &gt, &skel, 150.0).unwrap(), 50.0);

        let mut far = gt.clone();
        for j in 1..5 {
            far[0].0[j][1] += 200.0;
        }
        assert_eq!(pck(&far, &gt, &skel, 150.0).unwrap(), 0.0);

        let two = Skeleton::chain(2, vec![]).unwrap();
        let g = vec![Pose3D(vec![[0.0; 3], [0.0; 3]])];
        let off = |d: f64| vec![Pose3D(vec![[0.0; 3], [d, 0.0, 0.0]])];
        let thresholds = default_auc_thresholds();
        assert_eq!(auc(&off(151.0), &g, &two, &thresholds).unwrap(), 0.0);
        // 85, 90, ..., 150 pass: 14 of 30
        let a = auc(&off(80.0), &g, &two, &thresholds).unwrap();
        assert!((a - 100.0 * 14.0 / 30.0).abs() < 1e-9);
        assert_eq!(
            auc(&off(120.0), &g, &two, &[150.0]).unwrap(),
            pck(&off(120.0), &g, &two, 150.0).unwrap()
        );
        assert!(pck(&off(1.0), &[], &two, 150.0).is_err());
    }

    #[test]
    fn velocity_bins_two_phase_clip() {
        let skel = Skeleton::chain(2, vec![]).unwrap();
        // 30 slow frames (2 mm/frame -> 0.05 m/s), 20 fast (10 mm/frame -> 0.25 m/s)
        let mut x = 0.0;
        let mut frames = Vec::new();
        for t in 0..50 {
            if t > 0 {
                x += if t < 30 { 2.0 } else { 10.0 };
            }
            frames.push(Pose3D(vec![[0.0; 3], [x, 0.0, 0.0]]));
        }
        let gt = PoseSequence3D::new(frames, 50.0).unwrap();
        let hist = mpjpe_by_velocity(&gt.frames, &gt, &skel, 0.1).unwrap();
        let populated: Vec<_> = hist.iter().filter(|b| b.is_populated()).collect();
        assert_eq!(populated.len(), 2);
        assert_eq!(populated[0].count, 30);
        assert_eq!(populated[1].count, 20);
        assert!(hist.iter().all(|b| b.mean_mpjpe.unwrap_or(0.0) == 0.0));
        assert_eq!(hist.last().unwrap().cdf, 1.0);

        let still = PoseSequence3D::new(vec![Pose3D(vec![[0.0; 3], [1.0, 0.0, 0.0]]); 5], 50.0).unwrap();
        let h = mpjpe_by_velocity(&still.frames, &still, &skel, 0.1).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].count, 5);
    }
}
