//! Seeded randomness.
//!
//! Every stochastic operation in the crate draws from [`SeededRng`], which is
//! ChaCha with 8 rounds as implemented by `rand_chacha`. Its output stream is
//! fixed by the algorithm, so a given seed produces the same numbers on every
//! platform. Seeds for independent sub-streams (one per kernel entry, per data
//! point, per resample) are derived from a master seed with [`derive_seed`] so
//! that parallel and serial evaluation consume identical streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a path of indices into a new 64-bit seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}
