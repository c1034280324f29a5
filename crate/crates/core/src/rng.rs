//! Seeded random substreams.
//!
//! Every stochastic step draws from a ChaCha stream keyed by `(seed, tag)` and
//! indexed by a stream id (usually a unit or replication index), so results do
//! not depend on the order in which units or replications are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a child seed from a parent seed and a list of integer coordinates.
pub fn derive_seed(seed: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(mix64(seed), |acc, &c| mix64(acc ^ mix64(c.wrapping_add(0x632b_e59b_d9b4_e019))))
}

/// Stream-tags keep independent uses of the same seed apart.
pub mod tag {
    pub const COEFFICIENTS: u64 = 1;
    pub const UNITS: u64 = 2;
    pub const CORRUPTION: u64 = 3;
    pub const ANNOTATION: u64 = 4;
    pub const FOLDS: u64 = 5;
    pub const INIT: u64 = 6;
    pub const VALIDATION: u64 = 7;
    pub const BATCHES: u64 = 8;
    pub const SPLITS: u64 = 9;
    pub const PERMUTATION: u64 = 10;
    pub const MACHINE: u64 = 11;
    pub const ORACLE: u64 = 12;
}

pub fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[tag]));
    rng.set_stream(index);
    rng
}
