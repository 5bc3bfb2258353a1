//! Seed derivation for reproducible parallel noise.
//!
//! Every stochastic operator receives a [`NoiseStream`]. Streams are derived
//! from one root seed by hashing, and each pixel row draws from its own ChaCha
//! stream keyed by the row index, so results do not depend on how rows are
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A keyed family of counter-based random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseStream {
    key: u64,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self { key: mix(seed ^ GOLDEN) }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Child stream for a labelled sub-task (operator name, job id, ...).
    pub fn derive(&self, tag: u64) -> Self {
        Self { key: mix(self.key.wrapping_add(mix(tag.wrapping_add(GOLDEN)))) }
    }

    pub fn derive_str(&self, tag: &str) -> Self {
        // FNV-1a keeps labels stable across platforms and compiler versions
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in tag.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        self.derive(h)
    }

    pub fn frame(&self, index: u64) -> Self {
        self.derive(index.wrapping_mul(2).wrapping_add(1))
    }

    /// Generator for a single pixel row.
    pub fn row_rng(&self, row: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.key);
        rng.set_stream(row as u64);
        rng
    }

    /// Generator for whole-frame sequential draws (parameter sampling).
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.key);
        rng.set_stream(u64::MAX);
        rng
    }
}
