//! Seed derivation for reproducible, order-independent random streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] whose seed is a
//! pure function of a master seed and a path of indices (replicate, row, ...).
//! Results therefore do not depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `seed` and a sequence of stream indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(seed.wrapping_add(GOLDEN)), |acc, &idx| {
        mix(acc ^ mix(idx.wrapping_add(GOLDEN).wrapping_mul(GOLDEN)))
    })
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for the child stream `path` under `seed`.
pub fn child_rng(seed: u64, path: &[u64]) -> ChaCha8Rng {
    rng_from(derive_seed(seed, path))
}

/// Stream labels, so different consumers of the same master seed never collide.
pub mod stream {
    pub const TRUTH: u64 = 1;
    pub const DESIGN: u64 = 2;
    pub const RESPONSES: u64 = 3;
    pub const FIT: u64 = 4;
    pub const KL: u64 = 5;
    pub const REPLICATE: u64 = 6;
    pub const RESTART: u64 = 7;
    pub const REINIT: u64 = 8;
}
