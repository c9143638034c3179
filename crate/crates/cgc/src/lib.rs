//! Capability-guided compression at desk scale.
//!
//! This crate is a self-contained laboratory for studying how *capability
//! density* — a measure of how broadly, diversely and consistently a model
//! component participates in the model's behaviour — can steer compression.
//! It provides:
//!
//! - [`tinylm`]: a small deterministic byte-level transformer (training,
//!   perplexity evaluation, per-head activation capture, head ablation and
//!   magnitude pruning),
//! - [`sae`]: per-head TopK sparse autoencoders over captured activations,
//! - [`density`]: feature breadth / diversity / cross-context consistency and
//!   the capability-density score built from them,
//! - [`importance`]: Wanda-style and ablation-based head importance,
//! - [`alloc`]: differential pruning-budget allocation (density-proportional
//!   water-filling, an evolutionary refinement, uniform and inverted
//!   baselines),
//! - [`redsim`]: a synthetic redundancy simulator that checks the predicted
//!   destruction/allocation effects without training anything,
//! - [`stats`]: rank and linear correlation with significance,
//! - [`artifact`]: the binary/JSON artifact containers shared by the CLI.
//!
//! Everything stochastic takes an explicit seed and is bit-reproducible on a
//! given machine; see the guide in `book/` for a walkthrough.

// Validation code writes `!(x > 0.0)` on purpose: unlike `x <= 0.0`, it
// also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alloc;
pub mod artifact;
pub mod density;
pub mod error;
pub mod importance;
pub mod redsim;
pub mod rng;
pub mod sae;
pub mod stats;
pub mod tinylm;

pub use error::{Error, Result};

#[cfg(doctest)]
mod booktests;
