//! Minimal 64-bit differentiable substrate.
//!
//! Parameters of a model live in one flat buffer ([`ParamSet`]) addressed by
//! named [`Slot`]s; gradients use a buffer of the same layout. Layers expose
//! explicit `forward` (returning an output and a cache) and `backward`
//! (accumulating into the gradient buffer and returning the input gradient).

pub mod attention;
pub mod block;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod params;
mod tensor;

pub use attention::CausalSelfAttention;
pub use block::{Backbone, BackboneCache, Block, Ffn, FfnKind, Preset, TransformerConfig};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use layers::{Embedding, FeedForward, LayerNorm, Linear};
pub use ops::{cross_entropy, softmax};
pub use optim::{clip_grad_norm, Adam, AdamConfig};
pub use params::{Init, ParamBuilder, ParamSet, ParamSpec, Slot};
pub use tensor::Tensor;
