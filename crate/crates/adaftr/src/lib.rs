//! Joint click and conversion estimation with adaptive representation
//! alignment. Multi-task backbones (single DNN, shared bottom, MMoE) feed
//! per-task towers; an auxiliary relatedness network drives a per-instance
//! contrastive temperature. All gradients are computed by hand-written
//! backward passes.

pub mod config;
pub mod datasets;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod trainer;

pub use error::{Error, Result};
