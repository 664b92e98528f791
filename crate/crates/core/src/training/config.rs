use serde::{Deserialize, Serialize};

use super::loss::LossWeights;
use crate::error::{Error, Result};
use crate::sequencing::StrideSchedule;

/// Optimisation and augmentation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Input strides mixed during training, each a multiple of `s_out`.
    pub strides_in: Vec<usize>,
    pub epochs: usize,
    /// Optimizer steps per epoch. `None` means one pass over every frame.
    pub steps_per_epoch: Option<usize>,
    /// Hard cap on the total number of steps.
    pub max_steps: Option<usize>,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub wd0: f64,
    pub alpha_seq: f64,
    pub alpha_center: f64,
    pub ema_decay: f64,
    pub ema_enabled: bool,
    pub wba_enabled: bool,
    pub flip_tta_enabled: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            strides_in: Vec::new(),
            epochs: 120,
            steps_per_epoch: None,
            max_steps: None,
            batch_size: 32,
            lr0: 4e-5,
            lr_decay: 0.99,
            wd0: 4e-6,
            alpha_seq: 0.5,
            alpha_center: 0.5,
            ema_decay: 0.999,
            ema_enabled: true,
            wba_enabled: true,
            flip_tta_enabled: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Input strides, falling back to the schedule's own `s_in`.
    pub fn strides(&self, schedule: &StrideSchedule) -> Vec<usize> {
        if self.strides_in.is_empty() {
            vec![schedule.stride_in]
        } else {
            self.strides_in.clone()
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha_seq: self.alpha_seq,
            alpha_center: self.alpha_center,
        }
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_decay.powi(epoch as i32)
    }

    pub fn weight_decay(&self, epoch: usize) -> f64 {
        self.wd0 * self.lr_decay.powi(epoch as i32)
    }

    pub fn validate(&self, schedule: &StrideSchedule) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for s in self.strides(schedule) {
            if let Err(e) = schedule.with_stride_in(s) {
                return bad(format!("training stride {s}: {e}"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.wba_enabled && self.batch_size % 2 != 0 {
            return bad(format!("batch_size {} must be even with flip augmentation", self.batch_size));
        }
        if !(self.alpha_seq >= 0.0 && self.alpha_center >= 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        if !(self.lr0 >= 0.0 && self.wd0 >= 0.0 && self.lr_decay > 0.0) {
            return bad("learning rate, weight decay and decay factor must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return bad(format!("ema_decay {} outside [0, 1]", self.ema_decay));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.lr(0), 4e-5);
        assert!((c.lr(69) - 2.0e-5).abs() < 0.01e-5);
        assert_eq!(c.weight_decay(0), 4e-6);
    }

    #[test]
    fn validation() {
        let s = StrideSchedule::new(81, 4, 2).unwrap();
        let mut c = TrainConfig { strides_in: vec![4, 10, 20], ..TrainConfig::default() };
        assert!(c.validate(&s).is_ok());
        c.strides_in = vec![5];
        assert!(c.validate(&s).is_err());
        c.strides_in = vec![4];
        c.batch_size = 7;
        assert!(c.validate(&s).is_err());
        c.wba_enabled = false;
        assert!(c.validate(&s).is_ok());
    }
}
