//! Seeded random streams.
//!
//! Every consumer of randomness owns a stream derived from a master seed and
//! a tag, so adding a consumer never perturbs another one's sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, tag)`.
pub fn stream(seed: u64, tag: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(tag)))
}

/// Well-known stream tags.
pub mod tags {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const MIXUP: u64 = 3;
    pub const FOLDS: u64 = 4;
    pub const SYNTH: u64 = 5;

    /// Tag for a per-fold stream of kind `base`.
    pub fn fold(base: u64, fold: usize) -> u64 {
        base.wrapping_mul(1_000_003).wrapping_add(fold as u64 + 1)
    }
}
