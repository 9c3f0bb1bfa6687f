//! Seed lineage.
//!
//! Every random stream in the toolkit is a ChaCha8 generator whose seed is
//! derived from a parent seed and a purpose string, so one top-level seed
//! reproduces a whole experiment and every sub-stream can be re-derived from
//! the report metadata.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed as the first 8 bytes (little-endian) of
/// `SHA-256(le_bytes(parent) || purpose)`.
pub fn derive_seed(parent: u64, purpose: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    hasher.update(purpose.as_bytes());
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(parent: u64, purpose: &str) -> ChaCha8Rng {
    rng_from_seed(derive_seed(parent, purpose))
}
