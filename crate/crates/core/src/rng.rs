//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by a 64-bit seed; sub-tasks get their own seed derived from the
//! parent seed and a stable task index, so results never depend on how work
//! is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type TaskRng = ChaCha8Rng;

/// Environment variable consulted when no explicit seed is given.
pub const SEED_ENV: &str = "AMBIENT_MOMENTS_SEED";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed of sub-stream `stream` of `base`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

/// Order-sensitive hash of a tuple of integers, stable across platforms.
pub fn stable_hash(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0xcbf2_9ce4_8422_2325, |acc, &p| splitmix64(acc ^ p))
}

pub fn task_rng(seed: u64) -> TaskRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn substream(base: u64, stream: u64) -> TaskRng {
    task_rng(derive_seed(base, stream))
}
