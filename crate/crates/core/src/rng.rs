//! Seed derivation for shot sampling.
//!
//! Every kernel entry gets its own ChaCha8 stream whose seed is a pure
//! function of `(master_seed, i, j)`, so results do not depend on the order
//! (or thread) in which entries are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for kernel entry `(i, j)` under `master_seed`.
pub fn entry_seed(master_seed: u64, i: u64, j: u64) -> u64 {
    mix64(mix64(mix64(master_seed) ^ i) ^ j.rotate_left(32))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
