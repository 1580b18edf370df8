//! Stable derivation of independent RNG streams from one run seed.
//!
//! Every random decision in a run (restart initialization, resampling,
//! insight-injection draws, idea sampling) pulls from its own stream derived
//! from the run seed, a string label, and integer coordinates. Streams are
//! stable across platforms and releases: adding one more consumer never
//! shifts the draws of an existing one.

use sha2::{Digest, Sha256};

/// Derive a child seed from `base`, a stream `label`, and coordinates.
pub fn mix_seed(base: u64, label: &str, parts: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update([label.len() as u8]);
    hasher.update(label.as_bytes());
    for p in parts {
        hasher.update(p.to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
