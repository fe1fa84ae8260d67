//! Seed derivation. Every random stream in a run is keyed off the experiment
//! seed through [`derive`], so no two subsystems share a generator and the
//! order in which streams are consumed never matters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Values are arbitrary but frozen; changing one changes every
/// run's output.
pub mod stream {
    pub const TRAIN_DATA: u64 = 0x01;
    pub const TEST_DATA: u64 = 0x02;
    pub const PARTITION: u64 = 0x03;
    pub const INIT: u64 = 0x04;
    pub const SAMPLING: u64 = 0x05;
    pub const CLIENT_TRAIN: u64 = 0x06;
    pub const POISON: u64 = 0x07;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix `tag` into `seed`. Not commutative: `derive(derive(s, a), b)` and
/// `derive(derive(s, b), a)` differ.
pub fn derive(seed: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ tag.rotate_left(17) ^ 0x5851_f42d_4c95_7f2d)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
