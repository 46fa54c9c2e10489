//! Deterministic random streams.
//!
//! A run owns one master seed. Every consumer of randomness derives its own
//! stream from `(seed, tags...)`, so inserting or removing draws in one place
//! never shifts the draws seen elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Subroutine tags used when splitting a run's master seed.
pub mod tag {
    pub const INITIAL_STATE: u64 = 1;
    pub const CRITIC: u64 = 2;
    pub const ACTOR: u64 = 3;
    pub const GENERATOR: u64 = 4;
    pub const PROBE: u64 = 5;
    pub const REPLICA: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with an ordered list of tags into a 64-bit stream key.
pub fn stream_key(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t.wrapping_add(0x5851_f42d_4c95_7f2d))))
}

pub fn stream(seed: u64, tags: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(stream_key(seed, tags))
}
