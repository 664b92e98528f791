use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bilinear_upsample, pose_velocity, Pose2D, Pose3D, PoseSequence3D, Skeleton};
use crate::sequencing::{sliding_plan, window_plan_global, StrideSchedule};
use crate::training::{predict_window, Predictor};

/// Two-level input-stride controller driven by pose velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptiveConfig {
    pub slow_stride: usize,
    pub fast_stride: usize,
    /// m/s
    pub velocity_threshold: f64,
    /// Frames without exceeding the threshold before returning to the slow stride.
    pub cooldown: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            slow_stride: 20,
            fast_stride: 5,
            velocity_threshold: 0.5,
            cooldown: 25,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self, base: &StrideSchedule) -> Result<()> {
        if self.fast_stride > self.slow_stride {
            return Err(Error::Config(format!(
                "fast stride {} exceeds slow stride {}",
                self.fast_stride, self.slow_stride
            )));
        }
        if !(self.velocity_threshold > 0.0) {
            return Err(Error::Config("velocity threshold must be > 0".into()));
        }
        base.with_stride_in(self.slow_stride)?;
        base.with_stride_in(self.fast_stride)?;
        Ok(())
    }
}

/// Controller state machine, stepped once per window center.
#[derive(Debug, Clone, PartialEq)]
pub struct StrideController {
    cfg: AdaptiveConfig,
    fast: bool,
    last_exceed: Option<usize>,
}

impl StrideController {
    pub fn new(cfg: AdaptiveConfig) -> Self {
        StrideController {
            cfg,
            fast: false,
            last_exceed: None,
        }
    }

    pub fn stride(&self) -> usize {
        if self.fast {
            self.cfg.fast_stride
        } else {
            self.cfg.slow_stride
        }
    }

    /// Feed the velocity estimate available at frame `t`; returns the stride
    /// to use for the window centered at `t`.
    pub fn update(&mut self, t: usize, velocity: Option<f64>) -> usize {
        if velocity.is_some_and(|v| v > self.cfg.velocity_threshold) {
            self.fast = true;
            self.last_exceed = Some(t);
        } else if self.fast && self.last_exceed.is_some_and(|l| t - l >= self.cfg.cooldown) {
            self.fast = false;
        }
        self.stride()
    }
}

/// Where the controller reads velocity from.
#[derive(Debug, Clone, Copy)]
pub enum VelocitySource<'a> {
    /// Speed between the two most recent center predictions.
    Predicted,
    /// Externally supplied per-frame velocity, m/s.
    Oracle(&'a [f64]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrideSwitch {
    pub frame: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveOutput {
    /// Dense poses at the full frame rate.
    pub poses: Vec<Pose3D>,
    /// Input stride of the window governing each frame.
    pub trace: Vec<usize>,
    pub switches: Vec<StrideSwitch>,
    pub forwards: usize,
}

/// Sliding-window inference whose input stride follows the controller.
/// `base` supplies `N` and `s_out`; its `s_in` is ignored.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_infer<P: Predictor + ?Sized>(
    predictor: &P,
    clip: usize,
    inputs2d: &[Pose2D],
    base: &StrideSchedule,
    cfg: &AdaptiveConfig,
    skel: &Skeleton,
    frame_rate: f64,
    velocity: VelocitySource<'_>,
    flip_tta: bool,
) -> Result<AdaptiveOutput> {
    cfg.validate(base)?;
    let len = inputs2d.len();
    if len == 0 {
        return Err(Error::EmptyInput("clip has no frames".into()));
    }
    if let VelocitySource::Oracle(v) = velocity {
        if v.len() != len {
            return Err(Error::shape(len, v.len()));
        }
    }
    let slow = base.with_stride_in(cfg.slow_stride)?;
    let fast = base.with_stride_in(cfg.fast_stride)?;
    let mut ctl = StrideController::new(cfg.clone());
    let mut keys: Vec<Pose3D> = Vec::new();
    let mut strides = Vec::new();
    let mut switches = Vec::new();
    for t in sliding_plan(len, base) {
        let v = match velocity {
            VelocitySource::Oracle(v) => Some(v[t]),
            VelocitySource::Predicted if keys.len() >= 2 => {
                let seq = PoseSequence3D {
                    frames: keys[keys.len() - 2..].to_vec(),
                    frame_rate: frame_rate / base.stride_out as f64,
                };
                Some(pose_velocity(&seq, skel)?[1])
            }
            VelocitySource::Predicted => None,
        };
        let before = ctl.stride();
        let s = ctl.update(t, v);
        if s != before {
            switches.push(StrideSwitch { frame: t, stride: s });
        }
        let sched = if s == cfg.fast_stride { &fast } else { &slow };
        let plan = window_plan_global(t, len, sched)?;
        keys.push(predict_window(predictor, clip, inputs2d, &plan, skel, flip_tta)?);
        strides.push(s);
    }
    let forwards = keys.len() * if flip_tta { 2 } else { 1 };
    let poses = bilinear_upsample(&keys, base.stride_out, len)?;
    let trace = (0..len)
        .map(|f| strides[(f / base.stride_out).min(strides.len() - 1)])
        .collect();
    Ok(AdaptiveOutput {
        poses,
        trace,
        switches,
        forwards,
    })
}
