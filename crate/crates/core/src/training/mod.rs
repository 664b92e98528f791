//! Losses, batch assembly, AdamW with EMA, the training loop, the
//! pre-train/fine-tune pipeline and full-rate evaluation.

mod batch;
mod config;
mod eval;
mod loss;
mod optim;
mod trainer;

pub use batch::{build_batch, make_sample, Clip, TrainingSample, TrainingSet};
pub use config::TrainConfig;
pub use eval::{
    center_mpjpe_on_frames, evaluate, infer_clip, predict_window, report_predictions, EvalReport,
    ModelPredictor, OraclePredictor, Predictor, Window,
};
pub use loss::{loss_and_grad, loss_center, loss_sequence, loss_total, LossWeights};
pub use optim::{ema_update, AdamW};
pub use trainer::{pretrain_finetune, write_log_csv, PhaseOutcome, StepStats, Trainer};
