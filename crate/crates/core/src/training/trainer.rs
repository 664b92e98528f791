use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{build_batch, TrainingSet};
use super::config::TrainConfig;
use super::loss::{loss_and_grad, loss_center, loss_sequence};
use super::optim::{ema_update, AdamW};
use crate::error::{Error, Result};
use crate::network::{Checkpoint, Mode, ModelConfig, ParamStore, Uplifter};

const BATCH_STREAM: u64 = 0x5EED_BA7C;

/// Losses of one optimizer step, averaged over the batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_sequence: f64,
    pub loss_center: f64,
    pub ema: bool,
}

/// Optimisation state: raw weights, EMA shadow, AdamW moments and the
/// batch generator.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: Uplifter,
    cfg: TrainConfig,
    params: ParamStore,
    ema: Option<ParamStore>,
    opt: AdamW,
    rng: ChaCha8Rng,
    step: usize,
    log: Vec<StepStats>,
}

impl Trainer {
    /// Fresh weights drawn with `cfg.seed`.
    pub fn new(model: Uplifter, cfg: TrainConfig) -> Result<Self> {
        let params = model.init_params(cfg.seed);
        Trainer::with_params(model, params, cfg)
    }

    pub fn with_params(model: Uplifter, params: ParamStore, cfg: TrainConfig) -> Result<Self> {
        cfg.validate(&model.config().schedule)?;
        if params.len() != model.layout().total() {
            return Err(Error::shape(model.layout().total(), params.len()));
        }
        let ema = cfg.ema_enabled.then(|| params.clone());
        Ok(Trainer {
            opt: AdamW::new(params.len()),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ BATCH_STREAM),
            model,
            cfg,
            params,
            ema,
            step: 0,
            log: Vec::new(),
        })
    }

    /// Continue from the current weights under a new configuration:
    /// optimizer moments, step count and batch generator restart.
    pub fn restart(&mut self, cfg: TrainConfig) -> Result<()> {
        cfg.validate(&self.model.config().schedule)?;
        self.opt.reset();
        self.rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ BATCH_STREAM);
        self.step = 0;
        if cfg.ema_enabled && self.ema.is_none() {
            self.ema = Some(self.params.clone());
        } else if !cfg.ema_enabled {
            self.ema = None;
        }
        self.cfg = cfg;
        Ok(())
    }

    pub fn model(&self) -> &Uplifter {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Weights used for evaluation: the EMA shadow when enabled.
    pub fn eval_params(&self) -> &ParamStore {
        self.ema.as_ref().unwrap_or(&self.params)
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn log(&self) -> &[StepStats] {
        &self.log
    }

    pub fn steps_per_epoch(&self, set: &TrainingSet) -> usize {
        self.cfg
            .steps_per_epoch
            .unwrap_or_else(|| set.total_frames().div_ceil(self.cfg.batch_size))
            .max(1)
    }

    pub fn total_steps(&self, set: &TrainingSet) -> usize {
        let n = self.cfg.epochs * self.steps_per_epoch(set);
        self.cfg.max_steps.map_or(n, |m| n.min(m))
    }

    /// One optimizer step on a freshly drawn batch.
    pub fn step(&mut self, set: &TrainingSet) -> Result<StepStats> {
        if set.skeleton.joint_count() != self.model.config().joints {
            return Err(Error::SkeletonMismatch(format!(
                "model expects {} joints, training set has {}",
                self.model.config().joints,
                set.skeleton.joint_count()
            )));
        }
        let epoch = self.step / self.steps_per_epoch(set);
        let schedule = self.model.config().schedule;
        let batch = build_batch(set, &schedule, &self.cfg, &mut self.rng)?;
        let b = batch.len() as f64;
        let w = self.cfg.weights();
        let mut grads = ParamStore::zeros(self.params.layout().clone());
        let (mut total, mut seq, mut center) = (0.0, 0.0, 0.0);
        for sample in &batch {
            let seed: u64 = self.rng.random();
            let (out, cache) =
                self.model
                    .forward_with_cache(&self.params, &sample.inputs, &sample.layout, Mode::Train { seed })?;
            let lg = loss_and_grad(&out, &sample.targets, &sample.center_target, &set.skeleton, w)?;
            total += lg.value;
            seq += loss_sequence(&out.sequence_poses(), &sample.targets, &set.skeleton)?;
            center += loss_center(&out.center_pose(), &sample.center_target, &set.skeleton)?;
            let d_seq: Array2<f64> = lg.d_sequence / b;
            let d_center = lg.d_center / b;
            self.model.backward(&self.params, &cache, &d_seq, &d_center, &mut grads);
        }
        let lr = self.cfg.lr(epoch);
        self.opt
            .step(&mut self.params, &grads, lr, self.cfg.weight_decay(epoch))?;
        if let Some(ema) = &mut self.ema {
            ema_update(ema, &self.params, self.cfg.ema_decay)?;
        }
        self.step += 1;
        let stats = StepStats {
            step: self.step,
            epoch,
            lr,
            loss_total: total / b,
            loss_sequence: seq / b,
            loss_center: center / b,
            ema: self.ema.is_some(),
        };
        self.log.push(stats.clone());
        Ok(stats)
    }

    /// Train until the configured step budget is used up.
    pub fn run<F: FnMut(&StepStats)>(&mut self, set: &TrainingSet, mut on_step: F) -> Result<()> {
        let total = self.total_steps(set);
        while self.step < total {
            let s = self.step(set)?;
            on_step(&s);
        }
        Ok(())
    }

    /// Checkpoint of the evaluation weights, tagged with the training
    /// configuration and skeleton.
    pub fn checkpoint(&self, set: &TrainingSet) -> Checkpoint {
        let mut ck = Checkpoint::new(&self.model, self.eval_params().clone());
        ck.meta = serde_json::json!({
            "train": self.cfg,
            "steps": self.step,
            "weights": if self.ema.is_some() { "ema" } else { "raw" },
            "skeleton": set.skeleton,
        });
        ck
    }

    pub fn write_log(&self, path: &Path) -> Result<()> {
        write_log_csv(&self.log, path)
    }
}

pub fn write_log_csv(log: &[StepStats], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for s in log {
        w.serialize(s).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Checkpoints and logs of a pre-train then fine-tune run.
#[derive(Debug, Clone)]
pub struct PhaseOutcome {
    pub pretrain: Checkpoint,
    pub finetune: Checkpoint,
    pub pretrain_log: Vec<StepStats>,
    pub finetune_log: Vec<StepStats>,
}

/// Train on `pre`, then continue on `fine` with fresh optimizer state.
/// With `out_dir` set, both checkpoints and logs are written there.
pub fn pretrain_finetune(
    model: &ModelConfig,
    pre: &TrainingSet,
    pre_cfg: &TrainConfig,
    fine: &TrainingSet,
    fine_cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<PhaseOutcome> {
    if pre.skeleton != fine.skeleton {
        return Err(Error::SkeletonMismatch(format!(
            "pre-training skeleton {} differs from fine-tuning skeleton {}",
            pre.skeleton.name(),
            fine.skeleton.name()
        )));
    }
    let mut trainer = Trainer::new(Uplifter::new(model.clone())?, pre_cfg.clone())?;
    trainer.run(pre, |s| log::debug!("pretrain step {} loss {:.3}", s.step, s.loss_total))?;
    let pretrain = trainer.checkpoint(pre);
    let pretrain_log = trainer.log().to_vec();
    trainer.log.clear();
    trainer.restart(fine_cfg.clone())?;
    trainer.run(fine, |s| log::debug!("finetune step {} loss {:.3}", s.step, s.loss_total))?;
    let finetune = trainer.checkpoint(fine);
    let finetune_log = trainer.log().to_vec();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        pretrain.save(&dir.join("pretrain.ckpt"))?;
        finetune.save(&dir.join("finetune.ckpt"))?;
        write_log_csv(&pretrain_log, &dir.join("pretrain_log.csv"))?;
        write_log_csv(&finetune_log, &dir.join("finetune_log.csv"))?;
    }
    Ok(PhaseOutcome {
        pretrain,
        finetune,
        pretrain_log,
        finetune_log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Skeleton;
    use crate::sequencing::StrideSchedule;
    use crate::synth::{synthesize, SynthConfig};

    fn setup() -> (ModelConfig, TrainingSet, TrainConfig) {
        let ds = synthesize(
            &SynthConfig { sequences: 2, frames: 60, ..SynthConfig::default() },
            &Skeleton::h36m(),
        )
        .unwrap();
        let set = TrainingSet::from_dataset(&ds).unwrap();
        let mut mc = ModelConfig::tiny(StrideSchedule::new(9, 4, 1).unwrap(), 17);
        mc.drop_path_rate = 0.1;
        let tc = TrainConfig {
            strides_in: vec![2, 4],
            batch_size: 4,
            epochs: 1,
            steps_per_epoch: Some(3),
            lr0: 1e-3,
            ..TrainConfig::default()
        };
        (mc, set, tc)
    }

    #[test]
    fn seeded_step_is_bit_reproducible() {
        let (mc, set, tc) = setup();
        let run = || {
            let mut t = Trainer::new(Uplifter::new(mc.clone()).unwrap(), tc.clone()).unwrap();
            t.run(&set, |_| {}).unwrap();
            (t.params().clone(), t.eval_params().clone(), t.log().to_vec())
        };
        let (a, b) = (run(), run());
        assert!(a.0.data().iter().zip(b.0.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
        assert_eq!(a.2.len(), 3);
    }

    #[test]
    fn ema_tracks_without_touching_raw_weights() {
        let (mc, set, tc) = setup();
        let mut with = Trainer::new(Uplifter::new(mc.clone()).unwrap(), tc.clone()).unwrap();
        let mut without = Trainer::new(
            Uplifter::new(mc).unwrap(),
            TrainConfig { ema_enabled: false, ..tc },
        )
        .unwrap();
        with.run(&set, |_| {}).unwrap();
        without.run(&set, |_| {}).unwrap();
        assert_eq!(with.params(), without.params());
        assert_ne!(with.eval_params(), with.params());
    }

    #[test]
    fn finetune_phase_rules() {
        let (mc, set, tc) = setup();
        let none = TrainConfig { epochs: 0, ..tc.clone() };
        let out = pretrain_finetune(&mc, &set, &tc, &set, &none, None).unwrap();
        assert_eq!(out.pretrain.params, out.finetune.params);
        assert!(out.finetune_log.is_empty());

        let out = pretrain_finetune(&mc, &set, &none, &set, &tc, None).unwrap();
        let mut scratch = Trainer::new(Uplifter::new(mc.clone()).unwrap(), tc.clone()).unwrap();
        scratch.run(&set, |_| {}).unwrap();
        assert_eq!(&out.finetune.params, scratch.eval_params());

        let mut other = set.clone();
        other.skeleton = Skeleton::chain(17, vec![]).unwrap();
        assert!(matches!(
            pretrain_finetune(&mc, &set, &tc, &other, &tc, None),
            Err(Error::SkeletonMismatch(_))
        ));
    }

    #[test]
    fn log_is_csv() {
        let (mc, set, tc) = setup();
        let mut t = Trainer::new(Uplifter::new(mc).unwrap(), tc).unwrap();
        t.run(&set, |_| {}).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        t.write_log(&p).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "step,epoch,lr,loss_total,loss_sequence,loss_center,ema");
        assert_eq!(lines.count(), 3);
    }
}
