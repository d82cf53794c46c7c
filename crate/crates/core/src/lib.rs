//! Sustainability-aware sequential recommendation.
//!
//! The crate is split along the pipeline: [`numcore`] provides tensors and
//! reverse-mode gradients, [`dataset`] ingests and splits interaction logs,
//! [`model`] holds the attention network and prediction head, [`losses`]
//! the pairwise ranking objectives, and [`traineval`] the training loop,
//! ranking metrics and ablation runners.

pub mod config;
pub mod dataset;
pub mod error;
pub mod losses;
pub mod model;
pub mod numcore;
pub mod rng;
pub mod traineval;

pub use config::RunConfig;
pub use error::{GrapeError, Result};
