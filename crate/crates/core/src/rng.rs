//! Deterministic, path-derived random streams.
//!
//! A stream is identified by a root seed and a derivation path such as
//! `["scene", "17", "crop"]`. The stream's key is the SHA-256 of the
//! encoded (seed, path), so sibling paths get unrelated ChaCha streams and
//! nothing depends on the order in which streams are created.

use std::fmt;

use rand::{Error as RandError, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

#[derive(Clone)]
pub struct SeededRng {
    seed: u64,
    path: Vec<String>,
    stream: ChaCha20Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self::with_path(seed, Vec::new())
    }

    fn with_path(seed: u64, path: Vec<String>) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"occlusynth-rng/v1");
        hasher.update(seed.to_le_bytes());
        for label in &path {
            hasher.update((label.len() as u64).to_le_bytes());
            hasher.update(label.as_bytes());
        }
        let key: [u8; 32] = hasher.finalize().into();
        SeededRng {
            seed,
            path,
            stream: ChaCha20Rng::from_seed(key),
        }
    }

    /// Fresh stream for `path + [label]`. Independent of how much of `self`
    /// has been consumed.
    pub fn derive(&self, label: impl fmt::Display) -> SeededRng {
        let mut path = self.path.clone();
        path.push(label.to_string());
        Self::with_path(self.seed, path)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[String] {
        &self.path
    }

    /// `seed:label/label/...`, as recorded in scene metadata.
    pub fn path_string(&self) -> String {
        format!("{}:{}", self.seed, self.path.join("/"))
    }
}

impl fmt::Debug for SeededRng {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SeededRng")
            .field("seed", &self.seed)
            .field("path", &self.path)
            .finish()
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.stream.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.stream.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.stream.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), RandError> {
        self.stream.try_fill_bytes(dest)
    }
}

/// Stateless uniform value in `[-1, 1)` for element `index` of a keyed
/// tensor. Used for procedurally initialized weights that are too large to
/// materialize.
#[inline]
pub fn hashed_uniform(key: u64, index: u64) -> f64 {
    let mut z = key ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    ((z >> 11) as f64) * (2.0 / (1u64 << 53) as f64) - 1.0
}
