//! Seed derivation. Every stochastic stream in the crate is a ChaCha8
//! generator whose seed is derived from named integers with [`mix`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Combine two seed components into one.
#[inline]
pub fn mix(a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(a) ^ b.rotate_left(17))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const FNV_OFFSET: u64 = 0xCBF2_9CE4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;

/// 64-bit FNV-1a, continuing from `h` (start with [`FNV_OFFSET`]).
pub fn fnv1a(h: u64, bytes: &[u8]) -> u64 {
    bytes.iter().fold(h, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Seed of item `index` in the named family `label` under `seed`.
pub fn derive(seed: u64, label: &str, index: u64) -> u64 {
    mix(mix(seed, fnv1a(FNV_OFFSET, label.as_bytes())), index)
}

/// Generator for a named sub-stream of `seed`.
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    rng_from(mix(seed, fnv1a(FNV_OFFSET, label.as_bytes())))
}
