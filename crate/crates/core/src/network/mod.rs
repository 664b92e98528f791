//! The uplifting network: a joint-wise spatial Transformer, a temporal
//! Transformer over pose and upsampling tokens, and a strided reduction
//! Transformer, all with hand-written gradients over a flat parameter
//! arena.

mod blocks;
mod checkpoint;
mod config;
mod flops;
mod gradcheck;
mod layers;
mod model;
mod params;

pub use blocks::strided_positions;
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{default_strides, reduction_lengths, ModelConfig};
pub use flops::{flops_estimate, linear_flops, FlopsBreakdown};
pub use gradcheck::{
    analytic_gradient, grad_check, relative_error, GradCheckReport, LossGrad, Probe,
    GRAD_CHECK_FLOOR,
};
pub use layers::{gelu, gelu_grad};
pub use model::{ForwardCache, ForwardOutput, Mode, Uplifter, OUTPUT_SCALE_MM};
pub use params::{Init, ParamLayout, ParamStore, TensorId, TensorSpec};
