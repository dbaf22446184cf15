//! Experiment orchestration for the federated unlearning simulator: configuration,
//! the train / unlearn / recover / report pipeline, standalone steps on checkpoints,
//! and method comparison tables.

pub mod artifacts;
pub mod commands;
pub mod compare;
pub mod config;
pub mod error;
pub mod pipeline;

pub use error::{CliError, Result};
