//! Stable seed derivation.
//!
//! Every random quantity in the generator is drawn from its own stream whose
//! seed is `sha256(parent_seed_le || tag)`. Adding a new tagged stream never
//! perturbs an existing one, and sample seeds do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Concrete generator used everywhere; ChaCha output is stable across platforms and releases.
pub type Rng = ChaCha8Rng;

pub fn derive_seed(parent: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

/// Seed of sample `index` in a dataset generated with `global`.
pub fn sample_seed(global: u64, index: u64) -> u64 {
    derive_seed(global, &format!("sample/{index}"))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn stream(parent: u64, tag: &str) -> Rng {
    rng_from_seed(derive_seed(parent, tag))
}

/// Hex SHA-256 of a byte string; used for config/rig/topology fingerprints.
pub fn content_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
