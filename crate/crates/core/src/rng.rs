//! Seeding helpers. Every random decision in the crate draws from a
//! [`ChaCha8Rng`] seeded by [`derive_seed`], so results depend only on the
//! seed components and never on call order.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines an ordered list of components into one 64-bit seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().enumerate().fold(GOLDEN, |acc, (i, &p)| {
        mix64(acc ^ mix64(p.wrapping_add(GOLDEN.wrapping_mul(i as u64 + 1))))
    })
}

/// 64-bit FNV-1a of a string.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
