//! Seed derivation for independent random streams.
//!
//! Every run owns its random streams; sub-streams are derived from the run
//! seed and a tag so that parallel runs never share generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Mixes `seed` and `tag` into a new 64-bit seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, tag: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, tag))
}

/// Stream tags used across the crate.
pub mod tags {
    pub const WORLD: u64 = 1;
    pub const ROUNDS: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const POLICY: u64 = 4;
    pub const CANDIDATES: u64 = 5;
    pub const TUNING: u64 = 6;
    pub const LOG: u64 = 7;
}
