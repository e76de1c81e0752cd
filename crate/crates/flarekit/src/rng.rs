//! Deterministic per-index random streams.
//!
//! Every random decision in the toolkit draws from a stream derived from the
//! one user seed plus fixed integer salts, so any execution order (serial,
//! parallel, or regenerating a single index in isolation) yields identical
//! output.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream salts. Values are part of the on-disk determinism contract.
pub(crate) const SALT_IMAGE: u64 = 0x11;
pub(crate) const SALT_FLARE: u64 = 0x22;
pub(crate) const SALT_BACKGROUND: u64 = 0x33;
pub(crate) const SALT_TEMPLATE_BATCH: u64 = 0x44;
pub(crate) const SALT_GHOST: u64 = 0x55;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Folds `salts` into `seed` one word at a time.
pub fn mix_seed(seed: u64, salts: &[u64]) -> u64 {
    let mut acc = splitmix64(seed);
    for &s in salts {
        acc = splitmix64(acc ^ splitmix64(s));
    }
    acc
}

/// A ChaCha stream keyed by `(seed, salts...)`. ChaCha output is stable
/// across platforms, unlike `StdRng`.
pub fn stream(seed: u64, salts: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(mix_seed(seed, salts))
}
