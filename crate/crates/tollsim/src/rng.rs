//! Seed derivation for reproducible, order-independent randomness.
//!
//! Every stochastic component draws from a ChaCha stream whose seed is
//! derived from the run's base seed plus a fixed label path. Derivation is
//! a pure function, so results never depend on scheduling or evaluation
//! order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels, kept distinct so unrelated consumers never share a seed.
pub mod stream {
    pub const PERTURB: u64 = 0x01;
    pub const WORLD_TRIPS: u64 = 0x02;
    pub const WORLD_SIM: u64 = 0x03;
    pub const PREDICTOR_TRIPS: u64 = 0x04;
    pub const EVALUATION: u64 = 0x05;
    pub const GA: u64 = 0x06;
    pub const ESTIMATION: u64 = 0x07;
    pub const STATIC_GA: u64 = 0x08;
}

/// SplitMix64 avalanche step.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and a label path.
pub fn derive(base: u64, path: &[u64]) -> u64 {
    let mut state = splitmix(base);
    for &part in path {
        state = splitmix(state ^ splitmix(part));
    }
    state
}

/// A ChaCha stream for the given derived seed.
pub fn chacha(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, path))
}
