//! ROI statistics, comparison reports, chained inference and cycle traces.

#[cfg(feature = "nn")]
mod inference;
mod roi;

#[cfg(feature = "nn")]
pub use inference::*;
pub use roi::*;

use thiserror::Error;

use crate::data::DataError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid roi: {0}")]
    Roi(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[cfg(feature = "nn")]
    #[error(transparent)]
    Train(#[from] crate::training::TrainError),
    #[cfg(feature = "nn")]
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}
