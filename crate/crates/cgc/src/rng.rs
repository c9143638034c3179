//! Deterministic random-number plumbing.
//!
//! Every stochastic operation in the crate takes an explicit `u64` seed and
//! builds its generator through these helpers, so a (config, seed) pair pins
//! the whole pipeline. The generator is xoshiro256** — tiny state, excellent
//! statistical quality, and the same byte stream on every platform.
//! `seed_from_u64` expands the seed through SplitMix64, the recommended
//! seeding recipe for the xoshiro family, so nearby seeds (and the XORed
//! per-component seeds below) yield decorrelated streams.

use rand::SeedableRng;

/// The crate-wide generator type.
pub type Rng = rand_xoshiro::Xoshiro256StarStar;

/// Build a generator from a bare seed.
pub fn rng_from(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Derive the seed for the `index`-th component of a stage from the stage's
/// base seed (`base ^ index`, then SplitMix64 inside `seed_from_u64`).
pub fn component_seed(base: u64, index: u64) -> u64 {
    base ^ index
}
