//! Adversarial min-max optimisation over any experiment mode, with replay
//! buffers, checkpoints that capture the complete run state, and an NDJSON
//! step log.

mod adam;
mod buffer;
mod checkpoint;
mod config;
mod model;
mod trainer;

pub use adam::*;
pub use buffer::*;
pub use checkpoint::*;
pub use config::*;
pub use model::*;
pub use trainer::*;

use thiserror::Error;

use crate::data::DataError;
use crate::domain_chain::ChainError;
use crate::losses::LossBreakdown;
use crate::networks::NetworkError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
    #[error("composite objective non-finite for {count} consecutive steps (last at step {step}): {breakdown:?}")]
    NonFinite { step: u64, count: usize, breakdown: Box<LossBreakdown> },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Independent 64-bit seed for a named purpose, derived from the run seed.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    // splitmix64 finaliser
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
