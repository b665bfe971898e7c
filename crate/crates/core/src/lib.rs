//! Patch-based time-series representation learning.
//!
//! The pipeline trains a small causal transformer in two stages: next-patch
//! prediction over univariate patch sequences, then multi-patch prediction
//! fine-tuning in which non-parametric horizon anchors are refined under a
//! position-aware attention mask and decoded patch-by-patch. Everything is
//! CPU-only f64 with reproducible seeding throughout.

pub mod anchors;
pub mod backbone;
pub mod data;
pub mod error;
pub mod metrics;
pub mod patching;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
