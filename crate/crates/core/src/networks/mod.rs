//! Generators, discriminators and their parameter/FLOP accounting.

mod spec;
pub use spec::*;

#[cfg(feature = "nn")]
mod im2col;
#[cfg(feature = "nn")]
mod layers;
#[cfg(feature = "nn")]
mod models;
#[cfg(feature = "nn")]
pub use layers::{instance_norm, reflection_pad, zero_insert_upsample};
#[cfg(feature = "nn")]
pub use models::*;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[cfg(feature = "nn")]
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}
