//! Multi-task offline reinforcement learning with switch-layer trajectory
//! transformers.
//!
//! The crate covers the whole offline pipeline at desk scale:
//!
//! - [`gridworld`]: seedable sparse-reward navigation tasks and a scripted
//!   breadth-first-search expert used for data collection.
//! - [`dataset`]: multi-task episode collection, returns-to-go, the
//!   `(task, return-to-go, state, action)` token representation, splitting
//!   and a binary file format.
//! - [`nn`]: a small 64-bit differentiable substrate (dense layers,
//!   attention, layer norm, Adam, finite-difference gradient checks).
//! - [`switch`]: the top-1 mixture-of-experts feed-forward layer.
//! - [`models`]: action, dynamics and return-to-go sequence models.
//! - [`planner`]: imagined-rollout action selection and the closed-loop
//!   episode executor.

pub mod dataset;
pub mod error;
pub mod gridworld;
pub mod models;
pub mod nn;
pub mod par;
pub mod planner;
pub mod switch;

pub use error::{Error, Result};
pub use par::Execution;
