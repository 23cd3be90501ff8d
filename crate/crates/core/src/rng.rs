//! Seed plumbing. Every random stream in the crate is a ChaCha8 generator
//! seeded from a root seed mixed with a stream tag, so results are stable
//! across platforms and independent of call order between streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed from `seed` for the given stream tag.
pub fn split_seed(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ mix64(stream.wrapping_add(0xA5A5_A5A5)))
}

pub fn rng_from(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(split_seed(seed, stream))
}

pub(crate) mod streams {
    pub const MASK: u64 = 1;
    pub const SYNTHETIC: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const KMEANS: u64 = 5;
    pub const FINETUNE: u64 = 6;
}
