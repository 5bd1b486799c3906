//! Decoder-only transformer: configuration, parameters, forward pass and checkpoints.

pub mod attention;
mod checkpoint;
mod config;
mod gpt;
mod params;

pub use attention::{attention_naive, attention_tiled, attention_weights};
pub use config::{param_count, AttnTiling, GptConfig};
pub use gpt::{
    eval_loss, forward, loss, loss_and_grads, model_grad_check, model_grad_check_dual, record_forward, record_on, BatchShape,
    ForwardOptions, ModelLoss, Recorded,
};
pub use params::{count_matches, param_layout, GptParams, INIT_STD, LAYER_FIELDS};
pub use checkpoint::{Checkpoint, TrainState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
