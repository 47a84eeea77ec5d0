//! Experiment driver: configuration, the collect / train / eval / bench /
//! plot commands and their file formats. The `switchtt` binary is a thin
//! command-line layer over these functions.

pub mod bench;
pub mod config;
pub mod metrics;
pub mod pipeline;
pub mod plot;

pub use config::{ExperimentConfig, Method, ModelName};
