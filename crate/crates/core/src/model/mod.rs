//! The attention / state-space MIL survival network.
//!
//! Data flow: input projection, cycle padding to a square token grid with a
//! class token, two Nyström attention layers around a multi-scale depthwise
//! positional encoder, agent attention, a stack of reordered selective-scan
//! layers, gated attention pooling and a four-bin hazard classifier.

pub mod config;
pub mod forward;
pub mod gradcheck;
pub mod layers;
pub mod params;

pub use config::{Ablation, ModelConfig};
pub use forward::{forward, loss_and_grads, predict_bag, Forward, ForwardOptions, ForwardTrace, Mode};
pub use gradcheck::{grad_check, tiny_config, GradCheckOptions, GradCheckReport, GradTarget};
pub use layers::srmamba_reorder;
pub use params::{tensor_specs, ModelParams, TensorSpec};
