//! Trainable network layers, parameter management, and checkpoints.

mod checkpoint;
mod config;
mod forward;
mod inputs;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{ablate, AblationFlags, FeatureStats, ModelConfig, ModuleFlags};
pub use forward::{
    dvm_embed, forward_backward, init_embeddings, logits, loss_and_grads, model_forward,
    mpm_layer, readout, transformer_layer, ForwardTrace, GraphStep, LayerOutput, ParamVars,
};
pub use inputs::{EdgeLayout, GraphInputs};
pub use params::{check_params, init_params, param_count, param_shapes, ModelParams};
