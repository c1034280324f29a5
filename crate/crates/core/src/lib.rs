//! Surrogate representation inference.
//!
//! Cross-fitted, influence-function based estimation of covariate-adjusted
//! outcome means when only a random subset of units carries (possibly noisy)
//! human annotations and every unit carries a high-dimensional embedding.

pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod labelmodel;
pub mod network;
pub mod rng;

pub use error::{Error, Result};
