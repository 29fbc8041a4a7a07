//! A deliberately small trainable network: an identity-initialised affine
//! adapter standing in for the pretrained base model, followed by a 3-layer
//! GELU MLP head. Gradients are written out by hand.

pub mod activation;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod optim;

pub use activation::{gelu, log_softmax, softmax};
pub use layers::{Branch, Gradients, Linear, ModelConfig, ModelState, ParamSet};
pub use optim::{ema_update, lr_at, AdamW, AdamWConfig, TrainConfig};
