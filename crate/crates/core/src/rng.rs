//! Seeded random sources. Every stochastic routine in the crate takes an
//! explicit `u64` seed and derives its generator here so that results are
//! reproducible across runs and platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream from a base seed and a purpose tag.
pub fn derive(seed: u64, stream: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

/// The seed behind [`derive`], for APIs that take a plain `u64`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finaliser keeps nearby (seed, stream) pairs decorrelated
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
