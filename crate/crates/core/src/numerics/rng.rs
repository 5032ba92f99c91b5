//! Seedable randomness used across the crate.
//!
//! Everything stochastic (initialization, dropout masks, shuffling,
//! augmentation, synthetic data) draws from a [`SeedRng`] so runs are
//! reproducible bit-for-bit from a single `u64` seed.

use alloc::vec::Vec;
use rand_core::RngCore;

/// ChaCha8 stream cipher RNG; fast, portable, and stable across platforms.
pub type SeedRng = rand_chacha::ChaCha8Rng;

/// Builds the crate-wide RNG from a seed.
pub fn seeded(seed: u64) -> SeedRng {
    use rand_core::SeedableRng;
    SeedRng::seed_from_u64(seed)
}

/// Mixes components into a derived stream seed (splitmix64 finalizer).
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(b.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform in `[0, 1)` with 53 random mantissa bits.
#[inline]
pub fn next_f64(rng: &mut SeedRng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in `[lo, hi)`.
#[inline]
pub fn next_range(rng: &mut SeedRng, lo: f64, hi: f64) -> f64 {
    lo + next_f64(rng) * (hi - lo)
}

/// Uniform integer in `[0, n)` without modulo bias.
pub fn next_index(rng: &mut SeedRng, n: usize) -> usize {
    assert!(n > 0, "next_index on empty range");
    let n64 = n as u64;
    let zone = u64::MAX - (u64::MAX % n64);
    loop {
        let v = rng.next_u64();
        if v < zone {
            return (v % n64) as usize;
        }
    }
}

/// Draws an index from unnormalized non-negative weights.
pub fn next_weighted(rng: &mut SeedRng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0);
    let mut t = next_f64(rng) * total;
    for (i, &w) in weights.iter().enumerate() {
        t -= w;
        if t < 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut SeedRng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = next_index(rng, i + 1);
        items.swap(i, j);
    }
}

/// Uniform values in `[-bound, bound]`, the scale-stable init for embeddings
/// and projection matrices (`bound = 1/sqrt(d)`).
pub fn uniform_init(rng: &mut SeedRng, len: usize, bound: f64) -> Vec<f64> {
    (0..len).map(|_| next_range(rng, -bound, bound)).collect()
}
