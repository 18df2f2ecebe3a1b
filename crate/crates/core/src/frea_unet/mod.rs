//! The frequency-aware attention U-net.

pub mod attention;
pub mod checkpoint;
pub(crate) mod config;
mod model;

pub use attention::{attention_apply, attention_scores, global_descriptor};
pub use checkpoint::{content_hash, load, save};
pub use config::{ablation_config, Ablation, ModelConfig, DEPTH};
pub use model::{
    ForwardGraph, ForwardOptions, ForwardOutput, FreaUnetModel, GateMode, BN_EPS, BN_MOMENTUM,
};
