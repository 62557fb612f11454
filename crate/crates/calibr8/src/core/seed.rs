//! Splittable counter-based seed derivation.
//!
//! Every randomized operation in the toolkit derives per-task seeds from a
//! master seed and a task index, so concurrent dispatch order can never change
//! results. The derivation is a splitmix64 finalizer over the master seed
//! advanced by `index + 1` golden-ratio increments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Derive the seed for subtask `index` of a computation seeded by `master`.
pub fn split_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(GOLDEN_GAMMA.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG for subtask `index` of a computation seeded by `master`.
pub fn rng_from(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(split_seed(master, index))
}
