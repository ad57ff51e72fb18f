//! Feature-tokenizing transformer: per-metric embeddings with a `[CLS]`
//! token, stacked attention and ReGLU feed-forward layers, and a
//! LayerNorm + linear classification head.

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{Architecture, ModelConfig, Readout, N_CLASSES};
pub use forward::{
    attention_layer, baseline_forward, ffn_block, forward, forward_on_tape, positive_probabilities, predict,
    representation, tokenize, ForwardNodes, ReprChoice, DEFAULT_THRESHOLD,
};
pub use params::{
    init_params, kaiming_bound, AttentionParams, FfnParams, HeadParams, LayerParams, ModelParams, NormParams,
    ParamKind, TokenizerParams,
};
