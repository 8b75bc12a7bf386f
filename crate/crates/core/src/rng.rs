//! Seeded random streams. Every stochastic step in the pipeline draws from a
//! stream derived from an explicit seed and a small tuple of indices, so work
//! can be split across threads without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a seed and a list of stream indices into a single 64-bit seed.
pub fn stream_seed(seed: u64, indices: &[u64]) -> u64 {
    indices.iter().fold(mix(seed), |acc, &i| mix(acc ^ mix(i)))
}

pub fn stream(seed: u64, indices: &[u64]) -> Rng {
    Rng::seed_from_u64(stream_seed(seed, indices))
}
