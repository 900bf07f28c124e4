//! The desk-scale masked-language-model encoder.
//!
//! A deliberately small pre-layer-norm transformer in plain f64 with a
//! hand-written backward pass. Small enough to finite-difference check
//! end to end, big enough to memorize a synthetic gazetteer, and fully
//! deterministic given a seed.

mod bias;
mod checkpoint;
mod config;
mod forward;
mod loss;
mod optimizer;
mod params;

pub use bias::{build_visibility_bias, VisibilityBias, BLOCK};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use forward::{forward, ForwardTrace};
pub use loss::mlm_loss_and_grad;
pub use optimizer::{train_step, AdamConfig, AdamState, TrainItem};
pub use params::{init_params, LayerParams, Parameters};

pub(crate) use forward::argmax_logit;
