//! Seed derivation for independent, reproducible RNG streams.
//!
//! All randomness in the crate flows through [`ChaCha8Rng`] instances keyed
//! by a (master seed, purpose) pair, so adding a draw in one code path never
//! perturbs the stream of another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a offset basis / prime (64-bit).
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// splitmix64 finalizer; decorrelates structured inputs.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a purpose label.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let h = fnv1a(FNV_OFFSET ^ master, label.as_bytes());
    mix(h)
}

/// Derives a child seed from a master seed, a purpose label, and an index.
///
/// Used for per-site, per-epoch, and per-document streams.
pub fn derive_seed_indexed(master: u64, label: &str, index: u64) -> u64 {
    let h = fnv1a(FNV_OFFSET ^ master, label.as_bytes());
    mix(h ^ mix(index))
}

/// A deterministic RNG for the given derived seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
