//! MixNet: a mixture-of-experts acoustic-model architecture with a
//! contextual input MoE gated by broad-class posteriors and a gated output
//! MoE with learned routing, plus plain-DNN and two-stage-MoE baselines.
//!
//! The crate provides:
//! - [`linalg`]: dense, banded, and low-rank operators with exact parameter
//!   accounting,
//! - [`layers`]: forward/backward passes for every layer type and a
//!   finite-difference gradient checker,
//! - [`features`]: mean normalization, context splicing, and full-dimension
//!   LDA,
//! - [`synth`]: a deterministic generator of synthetic frame data with a
//!   broad-class/sub-class hierarchy and Markov temporal structure,
//! - [`training`]: model construction for every variant, auxiliary-classifier
//!   pretraining, joint SGD training, and evaluation,
//! - [`analysis`]: Fisher-ratio class-separation analysis and PCA scatter
//!   projection,
//! - [`cli`]: the `mixnet` command-line pipeline.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod features;
pub mod layers;
pub mod linalg;
pub mod rng;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
