use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::geometry::{Pose3D, Skeleton};
use crate::metrics::mpjpe;
use crate::network::{ForwardOutput, LossGrad};

/// Root-relative MPJPE of the center prediction, mm.
pub fn loss_center(pred: &Pose3D, gt: &Pose3D, skel: &Skeleton) -> Result<f64> {
    mpjpe(pred, gt, skel)
}

/// Mean root-relative MPJPE over every output slot, mm.
pub fn loss_sequence(pred: &[Pose3D], gts: &[Pose3D], skel: &Skeleton) -> Result<f64> {
    if pred.len() != gts.len() {
        return Err(Error::shape(gts.len(), pred.len()));
    }
    if gts.is_empty() {
        return Err(Error::EmptyInput("sequence loss over zero slots".into()));
    }
    let mut sum = 0.0;
    for (p, g) in pred.iter().zip(gts) {
        sum += mpjpe(p, g, skel)?;
    }
    Ok(sum / gts.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha_seq: f64,
    pub alpha_center: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_seq: 0.5,
            alpha_center: 0.5,
        }
    }
}

pub fn loss_total(
    seq: &[Pose3D],
    center: &Pose3D,
    gts: &[Pose3D],
    center_gt: &Pose3D,
    skel: &Skeleton,
    w: LossWeights,
) -> Result<f64> {
    Ok(w.alpha_seq * loss_sequence(seq, gts, skel)? + w.alpha_center * loss_center(center, center_gt, skel)?)
}

/// Adds `scale * d mpjpe / d pred` to `grad` (row-major `3J`).
/// Joints with zero error contribute a zero subgradient.
fn mpjpe_grad(pred: &[f64], gt: &Pose3D, root: usize, scale: f64, grad: &mut [f64]) {
    let j = gt.0.len();
    let k = scale / j as f64;
    let r = root * 3;
    let g0 = gt.0[root];
    for (i, g) in gt.0.iter().enumerate() {
        if i == root {
            continue;
        }
        let e = [
            (pred[3 * i] - pred[r]) - (g[0] - g0[0]),
            (pred[3 * i + 1] - pred[r + 1]) - (g[1] - g0[1]),
            (pred[3 * i + 2] - pred[r + 2]) - (g[2] - g0[2]),
        ];
        let n = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
        if n == 0.0 {
            continue;
        }
        for a in 0..3 {
            let d = k * e[a] / n;
            grad[3 * i + a] += d;
            grad[r + a] -= d;
        }
    }
}

/// Total loss of one forward pass and its gradient w.r.t. both outputs.
pub fn loss_and_grad(
    out: &ForwardOutput,
    gts: &[Pose3D],
    center_gt: &Pose3D,
    skel: &Skeleton,
    w: LossWeights,
) -> Result<LossGrad> {
    let n = out.sequence.nrows();
    if gts.len() != n {
        return Err(Error::shape(n, gts.len()));
    }
    let seq = out.sequence_poses();
    let center = out.center_pose();
    let value = loss_total(&seq, &center, gts, center_gt, skel, w)?;
    let mut d_sequence = Array2::zeros(out.sequence.raw_dim());
    for (s, g) in gts.iter().enumerate() {
        let row = out.sequence.row(s);
        let mut drow = d_sequence.row_mut(s);
        mpjpe_grad(
            row.as_slice().expect("contiguous row"),
            g,
            skel.root(),
            w.alpha_seq / n as f64,
            drow.as_slice_mut().expect("contiguous row"),
        );
    }
    let mut d_center = Array1::zeros(out.center.len());
    mpjpe_grad(
        out.center.as_slice().expect("contiguous"),
        center_gt,
        skel.root(),
        w.alpha_center,
        d_center.as_slice_mut().expect("contiguous"),
    );
    Ok(LossGrad {
        value,
        d_sequence,
        d_center,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng, j: usize) -> Pose3D {
        Pose3D((0..j).map(|_| [rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0), rng.random_range(3000.0..5000.0)]).collect())
    }

    #[test]
    fn center_examples() {
        let skel = Skeleton::chain(2, vec![]).unwrap();
        let gt = Pose3D(vec![[0.0; 3], [100.0, 0.0, 0.0]]);
        assert_eq!(loss_center(&gt, &gt, &skel).unwrap(), 0.0);
        let moved = gt.translated([10.0, -4.0, 7.0]);
        assert_relative_eq!(loss_center(&moved, &gt, &skel).unwrap(), 0.0, epsilon = 1e-12);
        let off = Pose3D(vec![[0.0; 3], [130.0, 0.0, 0.0]]);
        assert_relative_eq!(loss_center(&off, &gt, &skel).unwrap(), 15.0, epsilon = 1e-12);
    }

    #[test]
    fn sequence_error_at_one_slot() {
        let skel = Skeleton::chain(2, vec![]).unwrap();
        let gt = vec![Pose3D(vec![[0.0; 3], [0.0, 100.0, 0.0]]); 9];
        let mut pred = gt.clone();
        // 18 mm on one of two joints: 9 mm MPJPE at that slot
        pred[4].0[1][1] += 18.0;
        assert_relative_eq!(loss_sequence(&pred, &gt, &skel).unwrap(), 1.0, epsilon = 1e-12);
        assert!(loss_sequence(&pred[1..], &gt, &skel).is_err());
    }

    #[test]
    fn weighted_sum() {
        let skel = Skeleton::chain(2, vec![]).unwrap();
        let gt = Pose3D(vec![[0.0; 3], [0.0, 100.0, 0.0]]);
        let seq_pred = vec![Pose3D(vec![[0.0; 3], [0.0, 120.0, 0.0]])];
        let c_pred = Pose3D(vec![[0.0; 3], [0.0, 140.0, 0.0]]);
        let w = LossWeights::default();
        let total = loss_total(&seq_pred, &c_pred, &[gt.clone()], &gt, &skel, w).unwrap();
        assert_relative_eq!(total, 15.0, epsilon = 1e-12);
        let w0 = LossWeights { alpha_seq: 0.0, alpha_center: 0.5 };
        let total = loss_total(&seq_pred, &c_pred, &[gt.clone()], &gt, &skel, w0).unwrap();
        assert_relative_eq!(total, 0.5 * 20.0, epsilon = 1e-12);
    }

    #[test]
    fn sequence_is_mean_of_centers_and_translation_invariant() {
        let skel = Skeleton::h36m();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let n = rng.random_range(1..12);
            let gt: Vec<Pose3D> = (0..n).map(|_| random_pose(&mut rng, 17)).collect();
            let pred: Vec<Pose3D> = (0..n).map(|_| random_pose(&mut rng, 17)).collect();
            let seq = loss_sequence(&pred, &gt, &skel).unwrap();
            let mean = pred.iter().zip(&gt).map(|(p, g)| loss_center(p, g, &skel).unwrap()).sum::<f64>() / n as f64;
            assert_relative_eq!(seq, mean, max_relative = 1e-12);
            let shift = |v: &[Pose3D], rng: &mut ChaCha8Rng| -> Vec<Pose3D> {
                v.iter().map(|p| p.translated([rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3)])).collect()
            };
            let (ps, gs) = (shift(&pred, &mut rng), shift(&gt, &mut rng));
            assert_relative_eq!(loss_sequence(&ps, &gs, &skel).unwrap(), seq, max_relative = 1e-9);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let skel = Skeleton::chain(4, vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gts: Vec<Pose3D> = (0..3).map(|_| random_pose(&mut rng, 4)).collect();
        let preds: Vec<Pose3D> = (0..3).map(|_| random_pose(&mut rng, 4)).collect();
        let cp = random_pose(&mut rng, 4);
        let make = |seq: &[Pose3D], c: &Pose3D| ForwardOutput {
            sequence: Array2::from_shape_fn((3, 12), |(s, k)| seq[s].0[k / 3][k % 3]),
            center: Array1::from(c.to_flat()),
            attention: None,
        };
        let w = LossWeights { alpha_seq: 0.3, alpha_center: 0.7 };
        let out = make(&preds, &cp);
        let lg = loss_and_grad(&out, &gts, &gts[1], &skel, w).unwrap();
        let h = 1e-5;
        for s in 0..3 {
            for k in 0..12 {
                let mut a = out.clone();
                a.sequence[[s, k]] += h;
                let mut b = out.clone();
                b.sequence[[s, k]] -= h;
                let num = (loss_and_grad(&a, &gts, &gts[1], &skel, w).unwrap().value
                    - loss_and_grad(&b, &gts, &gts[1], &skel, w).unwrap().value)
                    / (2.0 * h);
                assert_relative_eq!(lg.d_sequence[[s, k]], num, epsilon = 1e-7);
            }
        }
        for k in 0..12 {
            let mut a = out.clone();
            a.center[k] += h;
            let mut b = out.clone();
            b.center[k] -= h;
            let num = (loss_and_grad(&a, &gts, &gts[1], &skel, w).unwrap().value
                - loss_and_grad(&b, &gts, &gts[1], &skel, w).unwrap().value)
                / (2.0 * h);
            assert_relative_eq!(lg.d_center[k], num, epsilon = 1e-7);
        }
    }
}
