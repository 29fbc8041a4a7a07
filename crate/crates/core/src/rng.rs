//! Deterministic seeding.
//!
//! Every random stream in the pipeline is derived from the run seed plus a
//! fixed tuple of coordinates (stage, iteration, track id, ...), so results do
//! not depend on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream salts. Distinct per consumer so streams never alias.
pub mod stage {
    pub const INIT: u64 = 0x1;
    pub const PAIRS: u64 = 0x2;
    pub const VIEWS: u64 = 0x3;
    pub const QUALITY: u64 = 0x4;
    pub const SHUFFLE: u64 = 0x5;
    pub const SYNTH: u64 = 0x6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix64(seed), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

pub fn stream(seed: u64, coords: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, coords))
}
