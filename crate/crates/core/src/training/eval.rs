use serde::{Deserialize, Serialize};

use super::batch::TrainingSet;
use crate::error::{Error, Result};
use crate::geometry::{bilinear_upsample, Pose, Pose2D, Pose3D, PoseSequence3D, Skeleton};
use crate::metrics::{MetricsReport, DEFAULT_VELOCITY_BIN_WIDTH};
use crate::network::{Checkpoint, Mode, ParamStore, Uplifter};
use crate::sequencing::{sliding_plan, window_plan_global, StrideSchedule, WindowPlan};

/// Everything a predictor sees for one window.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub clip: usize,
    pub plan: &'a WindowPlan,
    pub inputs: &'a [Pose2D],
    /// Inputs are the horizontal mirror of the video.
    pub flipped: bool,
}

/// Source of center-frame 3D predictions.
pub trait Predictor {
    fn predict(&self, window: &Window<'_>) -> Result<Pose3D>;
}

/// Trained network with fixed weights.
#[derive(Debug, Clone)]
pub struct ModelPredictor {
    pub model: Uplifter,
    pub params: ParamStore,
}

impl ModelPredictor {
    pub fn new(model: Uplifter, params: ParamStore) -> Self {
        ModelPredictor { model, params }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Ok(ModelPredictor::new(ck.model()?, ck.params.clone()))
    }
}

impl Predictor for ModelPredictor {
    fn predict(&self, w: &Window<'_>) -> Result<Pose3D> {
        let out = self
            .model
            .forward(&self.params, w.inputs, &w.plan.layout, Mode::Eval)?;
        Ok(out.center_pose())
    }
}

/// Returns the ground truth of the window center, mirrored when the
/// inputs are mirrored.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    pub skeleton: Skeleton,
    pub targets: Vec<Vec<Pose3D>>,
}

impl OraclePredictor {
    pub fn new(set: &TrainingSet) -> Self {
        OraclePredictor {
            skeleton: set.skeleton.clone(),
            targets: set.clips.iter().map(|c| c.targets.clone()).collect(),
        }
    }
}

impl Predictor for OraclePredictor {
    fn predict(&self, w: &Window<'_>) -> Result<Pose3D> {
        let gt = self
            .targets
            .get(w.clip)
            .and_then(|c| c.get(w.plan.center))
            .ok_or_else(|| Error::Config(format!("oracle has no frame {} of clip {}", w.plan.center, w.clip)))?;
        Ok(if w.flipped { gt.flipped(&self.skeleton) } else { gt.clone() })
    }
}

/// Center prediction for one plan, optionally averaged with the un-mirrored
/// prediction on mirrored inputs.
pub fn predict_window<P: Predictor + ?Sized>(
    predictor: &P,
    clip: usize,
    inputs2d: &[Pose2D],
    plan: &WindowPlan,
    skel: &Skeleton,
    flip_tta: bool,
) -> Result<Pose3D> {
    let inputs: Vec<Pose2D> = plan.input_frames.iter().map(|&f| inputs2d[f].clone()).collect();
    let p = predictor.predict(&Window { clip, plan, inputs: &inputs, flipped: false })?;
    if !flip_tta {
        return Ok(p);
    }
    let mirrored: Vec<Pose2D> = inputs.iter().map(|q| q.flipped(skel)).collect();
    let q = predictor
        .predict(&Window { clip, plan, inputs: &mirrored, flipped: true })?
        .flipped(skel);
    Ok(p.lerp(&q, 0.5))
}

/// Dense full-rate prediction of one clip: sliding windows every `s_out`
/// frames on the global key-frame grid, bilinear upsampling in between.
pub fn infer_clip<P: Predictor + ?Sized>(
    predictor: &P,
    clip: usize,
    inputs2d: &[Pose2D],
    schedule: &StrideSchedule,
    skel: &Skeleton,
    flip_tta: bool,
) -> Result<Vec<Pose3D>> {
    let len = inputs2d.len();
    if len == 0 {
        return Err(Error::EmptyInput("clip has no frames".into()));
    }
    let keys = sliding_plan(len, schedule)
        .into_iter()
        .map(|t| {
            let plan = window_plan_global(t, len, schedule)?;
            predict_window(predictor, clip, inputs2d, &plan, skel, flip_tta)
        })
        .collect::<Result<Vec<_>>>()?;
    bilinear_upsample(&keys, schedule.stride_out, len)
}

/// Full-rate metrics plus the same metrics restricted to key-frames
/// (`t mod s_in = 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schedule: StrideSchedule,
    pub flip_tta: bool,
    pub all_frames: MetricsReport,
    pub key_frames: MetricsReport,
}

pub fn report_predictions(
    preds: &[Vec<Pose3D>],
    set: &TrainingSet,
    schedule: &StrideSchedule,
    flip_tta: bool,
) -> Result<EvalReport> {
    if preds.len() != set.clips.len() {
        return Err(Error::shape(set.clips.len(), preds.len()));
    }
    let gts: Vec<PoseSequence3D> = set
        .clips
        .iter()
        .map(|c| PoseSequence3D { frames: c.targets.clone(), frame_rate: set.frame_rate })
        .collect();
    let pairs: Vec<(&[Pose3D], &PoseSequence3D)> =
        preds.iter().map(|p| p.as_slice()).zip(&gts).collect();
    let all_frames = MetricsReport::compute_many(&pairs, &set.skeleton, DEFAULT_VELOCITY_BIN_WIDTH)?;
    let s = schedule.stride_in;
    let key_pred: Vec<Vec<Pose3D>> = preds.iter().map(|p| p.iter().step_by(s).cloned().collect()).collect();
    let key_gt: Vec<PoseSequence3D> = gts
        .iter()
        .map(|g| PoseSequence3D {
            frames: g.frames.iter().step_by(s).cloned().collect(),
            frame_rate: g.frame_rate / s as f64,
        })
        .collect();
    let key_pairs: Vec<(&[Pose3D], &PoseSequence3D)> =
        key_pred.iter().map(|p| p.as_slice()).zip(&key_gt).collect();
    let key_frames = MetricsReport::compute_many(&key_pairs, &set.skeleton, DEFAULT_VELOCITY_BIN_WIDTH)?;
    Ok(EvalReport {
        schedule: *schedule,
        flip_tta,
        all_frames,
        key_frames,
    })
}

/// Predict every clip and score against its ground truth.
pub fn evaluate<P: Predictor + ?Sized>(
    predictor: &P,
    set: &TrainingSet,
    schedule: &StrideSchedule,
    flip_tta: bool,
) -> Result<EvalReport> {
    let preds = set
        .clips
        .iter()
        .enumerate()
        .map(|(i, c)| infer_clip(predictor, i, &c.inputs, schedule, &set.skeleton, flip_tta))
        .collect::<Result<Vec<_>>>()?;
    report_predictions(&preds, set, schedule, flip_tta)
}

/// Center-frame MPJPE on `count` fixed training windows, one per sampled
/// frame, using the training key-frame grid of `schedule`.
pub fn center_mpjpe_on_frames<P: Predictor + ?Sized>(
    predictor: &P,
    set: &TrainingSet,
    schedule: &StrideSchedule,
    frames: &[(usize, usize)],
) -> Result<f64> {
    let mut sum = 0.0;
    for &(clip, t) in frames {
        let c = &set.clips[clip];
        let plan = window_plan_global(t, c.targets.len(), schedule)?;
        let p = predict_window(predictor, clip, &c.inputs, &plan, &set.skeleton, false)?;
        sum += crate::metrics::mpjpe(&p, &c.targets[t], &set.skeleton)?;
    }
    Ok(sum / frames.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ModelConfig;
    use crate::synth::{synthesize, SynthConfig};

    fn set() -> TrainingSet {
        let ds = synthesize(
            &SynthConfig { sequences: 2, frames: 45, ..SynthConfig::default() },
            &Skeleton::h36m(),
        )
        .unwrap();
        TrainingSet::from_dataset(&ds).unwrap()
    }

    #[test]
    fn oracle_scores_perfectly() {
        let set = set();
        let sched = StrideSchedule::new(9, 4, 1).unwrap();
        for tta in [false, true] {
            let r = evaluate(&OraclePredictor::new(&set), &set, &sched, tta).unwrap();
            assert!(r.all_frames.mpjpe_mm < 1e-9, "{}", r.all_frames.mpjpe_mm);
            assert_eq!(r.all_frames.pck_percent, 100.0);
            assert_eq!(r.all_frames.auc_percent, 100.0);
            assert_eq!(r.all_frames.frames, 90);
            assert_eq!(r.key_frames.frames, 2 * 12);
        }
    }

    #[test]
    fn oracle_at_coarse_output_stride_interpolates() {
        let set = set();
        let sched = StrideSchedule::new(41, 20, 20).unwrap();
        let r = evaluate(&OraclePredictor::new(&set), &set, &sched, false).unwrap();
        assert!(r.key_frames.mpjpe_mm < 1e-9);
        assert!(r.all_frames.mpjpe_mm > 0.0);
    }

    #[test]
    fn tta_is_neutral_for_mirror_symmetric_predictor() {
        struct Zero(usize);
        impl Predictor for Zero {
            fn predict(&self, _: &Window<'_>) -> Result<Pose3D> {
                Ok(Pose3D::zeros(self.0))
            }
        }
        let set = set();
        let sched = StrideSchedule::new(9, 4, 1).unwrap();
        let a = evaluate(&Zero(17), &set, &sched, false).unwrap();
        let b = evaluate(&Zero(17), &set, &sched, true).unwrap();
        assert_eq!(a, EvalReport { flip_tta: false, ..b });
    }

    #[test]
    fn model_predictor_runs_every_window() {
        let set = set();
        let sched = StrideSchedule::new(9, 4, 1).unwrap();
        let model = Uplifter::new(ModelConfig::tiny(sched, 17)).unwrap();
        let params = model.init_params(3);
        let pred = ModelPredictor::new(model, params);
        let dense = infer_clip(&pred, 0, &set.clips[0].inputs, &sched, &set.skeleton, true).unwrap();
        assert_eq!(dense.len(), 45);
        assert!(dense.iter().all(|p| p.0.iter().flatten().all(|v| v.is_finite())));
    }
}
