//! Derived random streams.
//!
//! Every stochastic stage derives its own 64-bit seed from the run seed plus
//! a list of string tags (stage name, instance path, ...). Adding a stage or
//! reordering work therefore never perturbs another stage's draws, and any
//! single draw sequence can be replayed in isolation.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a child seed from `base` and an ordered list of tags.
///
/// The derivation is SHA-256 over the little-endian base seed and the
/// NUL-separated tags; the first eight digest bytes, little-endian, form the
/// child seed. Stable across platforms and releases.
pub fn derive_seed(base: u64, tags: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    for tag in tags {
        hasher.update([0u8]);
        hasher.update(tag.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest >= 8 bytes"))
}

/// Deterministic generator for a derived stream.
pub fn rng_for(base: u64, tags: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

/// Deterministic generator seeded directly (no derivation).
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
