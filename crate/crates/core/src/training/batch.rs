use rand::Rng;

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::geometry::{Pose, Pose2D, Pose3D, Skeleton};
use crate::sequencing::{plan_with_layout, token_layout_with_phase, StrideSchedule, TokenLayout};
use crate::synth::Dataset;

/// One clip prepared for training: normalized 2D inputs and camera-space
/// 3D targets (mm), frame-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub inputs: Vec<Pose2D>,
    pub targets: Vec<Pose3D>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub skeleton: Skeleton,
    pub frame_rate: f64,
    pub clips: Vec<Clip>,
}

impl TrainingSet {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let clips = (0..ds.sequences.len())
            .map(|i| {
                Ok(Clip {
                    inputs: ds.normalized_2d(i)?,
                    targets: ds.sequences[i].poses3d.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingSet {
            skeleton: ds.skeleton().clone(),
            frame_rate: ds.frame_rate(),
            clips,
        })
    }

    pub fn total_frames(&self) -> usize {
        self.clips.iter().map(|c| c.targets.len()).sum()
    }
}

/// A window of key-frame inputs with targets at every output slot.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub clip: usize,
    pub center: usize,
    pub stride_in: usize,
    pub flipped: bool,
    pub layout: TokenLayout,
    pub inputs: Vec<Pose2D>,
    pub targets: Vec<Pose3D>,
    pub center_target: Pose3D,
}

impl TrainingSample {
    pub fn flipped(&self, skel: &Skeleton) -> Self {
        TrainingSample {
            flipped: !self.flipped,
            inputs: self.inputs.iter().map(|p| p.flipped(skel)).collect(),
            targets: self.targets.iter().map(|p| p.flipped(skel)).collect(),
            center_target: self.center_target.flipped(skel),
            ..self.clone()
        }
    }
}

/// Window centered on `center` of `clip` with key-frames `phase` frames
/// into the window.
pub fn make_sample(
    set: &TrainingSet,
    clip: usize,
    center: usize,
    schedule: &StrideSchedule,
    phase: usize,
) -> Result<TrainingSample> {
    let c = &set.clips[clip];
    let layout = token_layout_with_phase(schedule, phase)?;
    let plan = plan_with_layout(center, c.targets.len(), schedule, layout)?;
    Ok(TrainingSample {
        clip,
        center,
        stride_in: schedule.stride_in,
        flipped: false,
        inputs: plan.input_frames.iter().map(|&f| c.inputs[f].clone()).collect(),
        targets: plan.output_frames.iter().map(|&f| c.targets[f].clone()).collect(),
        center_target: c.targets[center].clone(),
        layout: plan.layout,
    })
}

/// Draw a mini-batch. Each base sample picks a stride uniformly from the
/// configured list, a frame uniformly over all frames and a random
/// key-frame phase. With flip augmentation the back half mirrors the front.
pub fn build_batch<R: Rng + ?Sized>(
    set: &TrainingSet,
    schedule: &StrideSchedule,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<TrainingSample>> {
    let total = set.total_frames();
    if total == 0 {
        return Err(Error::EmptyInput("training set has no frames".into()));
    }
    let strides = cfg.strides(schedule);
    let bases = if cfg.wba_enabled { cfg.batch_size / 2 } else { cfg.batch_size };
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..bases {
        let s_in = strides[rng.random_range(0..strides.len())];
        let sched = schedule.with_stride_in(s_in)?;
        let phase = rng.random_range(0..s_in / sched.stride_out) * sched.stride_out;
        let mut f = rng.random_range(0..total);
        let mut clip = 0;
        while f >= set.clips[clip].targets.len() {
            f -= set.clips[clip].targets.len();
            clip += 1;
        }
        batch.push(make_sample(set, clip, f, &sched, phase)?);
    }
    if cfg.wba_enabled {
        for i in 0..bases {
            let flipped = batch[i].flipped(&set.skeleton);
            batch.push(flipped);
        }
    }
    Ok(batch)
}
