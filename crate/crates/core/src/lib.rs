//! Multi-step image denoising with multi-cycle-consistent adversarial
//! networks: a chain of domains ordered by noise level, generators between
//! adjacent domains, and cycle-consistency enforced both locally (one pair)
//! and globally (the whole chain out and back).

#[cfg(feature = "nn")]
pub mod cli;
pub mod data;
pub mod domain_chain;
pub mod evaluate;
pub mod networks;
#[cfg(feature = "nn")]
pub mod losses;
#[cfg(feature = "nn")]
pub mod training;
