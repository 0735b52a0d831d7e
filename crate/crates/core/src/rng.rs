//! Seed derivation. Every stochastic stream is a ChaCha8 generator keyed by a
//! seed derived from a master seed and a path of stream indices, so parallel
//! rollouts never share state and results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based child seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &i| splitmix64(acc ^ splitmix64(i.wrapping_add(0x5851_F42D_4C95_7F2D))))
}

pub fn rng_from(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn child_rng(master: u64, path: &[u64]) -> SimRng {
    rng_from(derive_seed(master, path))
}
