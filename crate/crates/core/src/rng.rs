//! Keyed random streams.
//!
//! Every random quantity is drawn from a ChaCha stream whose key is derived
//! from `(seed, role, indices...)`. Two streams with different keys never
//! overlap, and a stream can be recreated in isolation, so parallel schedules
//! cannot change results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha8Rng;

/// Role tags used throughout the crate.
pub mod role {
    pub const IMPUTE: &str = "impute";
    pub const WILD: &str = "wb";
    pub const SUBSAMPLE: &str = "pi";
    pub const BOOT: &str = "boot";
    pub const SIM: &str = "sim";
}

/// Path of a stream: a root seed, a role tag and a list of indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamKey {
    seed: u64,
    parts: Vec<Part>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Part {
    Tag(String),
    Index(u64),
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self { seed, parts: Vec::new() }
    }

    pub fn tag(mut self, tag: &str) -> Self {
        self.parts.push(Part::Tag(tag.to_owned()));
        self
    }

    pub fn index(mut self, index: u64) -> Self {
        self.parts.push(Part::Index(index));
        self
    }

    fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"crband-stream-v1");
        h.update(self.seed.to_le_bytes());
        for part in &self.parts {
            match part {
                Part::Tag(t) => {
                    h.update([0u8]);
                    h.update((t.len() as u64).to_le_bytes());
                    h.update(t.as_bytes());
                }
                Part::Index(i) => {
                    h.update([1u8]);
                    h.update(i.to_le_bytes());
                }
            }
        }
        h.finalize().into()
    }

    pub fn stream(&self) -> Stream {
        ChaCha8Rng::from_seed(self.digest())
    }

    /// A 64-bit seed for a nested family of streams.
    pub fn derive_seed(&self) -> u64 {
        let d = self.digest();
        u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
    }
}

/// Shorthand for the common `(seed, role, index)` key.
pub fn stream(seed: u64, role: &str, index: u64) -> Stream {
    StreamKey::new(seed).tag(role).index(index).stream()
}
