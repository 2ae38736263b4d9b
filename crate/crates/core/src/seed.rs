//! Seed derivation and RNG construction.
//!
//! Every stochastic component receives its own stream derived from a global
//! seed and a label: the first eight bytes (little endian) of
//! `SHA-256(seed_le_bytes || label)`. Streams are ChaCha8, which is portable
//! across platforms and crate versions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derives a module seed from a global seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Seed for one item of a data-parallel loop: `(base, epoch, index)`.
pub fn item_seed(base: u64, epoch: usize, index: usize) -> u64 {
    derive_seed(base, &format!("epoch={epoch};item={index}"))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_for(seed: u64, label: &str) -> Rng {
    rng(derive_seed(seed, label))
}

/// Lowercase hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derivation_is_stable_and_label_sensitive() {
        assert_eq!(derive_seed(7, "permset"), derive_seed(7, "permset"));
        assert_ne!(derive_seed(7, "permset"), derive_seed(7, "patchgen"));
        assert_ne!(derive_seed(7, "permset"), derive_seed(8, "permset"));
    }

    #[test]
    fn rng_streams_reproduce() {
        let a: Vec<u32> = (0..8).map(|_| 0).scan(rng(3), |r, _: i32| Some(r.random())).collect();
        let b: Vec<u32> = (0..8).map(|_| 0).scan(rng(3), |r, _: i32| Some(r.random())).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn sha_hex_known_value() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
