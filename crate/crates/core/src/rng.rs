//! Counter-based seed derivation so every episode and update owns an
//! independent, reproducible random stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of item `index` in stream `stream` derived from `base`.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ stream) ^ index)
}

pub fn stream_rng(base: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream, index))
}

/// Stream identifiers.
pub mod streams {
    pub const EPISODE_MAP: u64 = 1;
    pub const EPISODE_POLICY: u64 = 2;
    pub const TRAIN_ROLLOUT: u64 = 3;
    pub const TRAIN_SHUFFLE: u64 = 4;
    pub const INIT: u64 = 5;
    pub const EVAL_EPISODE: u64 = 6;
}
