//! Deterministic federated-learning simulator with on-device client unlearning.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: dense MLP engine (forward pass, softmax, losses, backprop, SGD/Adam)
//! - [`data`]: datasets, synthetic blobs, CSV ingestion and IID / Dirichlet partitioning
//! - [`federation`]: FedAvg rounds, byte accounting, the special unlearning round and recovery
//! - [`unlearning`]: virtual-teacher distillation (logit masking, softmax redistribution,
//!   uniform teacher), the natural baseline and the centralized variant
//! - [`evaluation`]: accuracy, membership-inference attacks and run reports
//!
//! Every source of randomness is an explicit seeded stream (see [`rng`]), so the same
//! inputs always produce bitwise identical models.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod federation;
pub mod nn;
pub mod rng;
pub mod unlearning;

pub use error::{Error, Result};
