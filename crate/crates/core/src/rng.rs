//! Seed derivation.
//!
//! Every stochastic consumer gets its own stream derived from the master seed
//! and a stable label path, so adding a consumer never perturbs the others.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `value` into `state`. Order sensitive.
#[inline]
pub fn combine(state: u64, value: u64) -> u64 {
    mix64(state ^ mix64(value))
}

pub fn hash_label(state: u64, label: &str) -> u64 {
    let mut h = combine(state, label.len() as u64);
    for chunk in label.as_bytes().chunks(8) {
        let mut buf = [0u8; 8];
        buf[..chunk.len()].copy_from_slice(chunk);
        h = combine(h, u64::from_le_bytes(buf));
    }
    h
}

/// Maps a hash to a uniform double in [0, 1).
#[inline]
pub fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// A labelled random stream. Cloning it duplicates the state.
#[derive(Clone, Debug)]
pub struct Stream {
    key: u64,
    rng: ChaCha8Rng,
}

impl Stream {
    pub fn new(master_seed: u64, label: &str) -> Self {
        Self::from_key(hash_label(mix64(master_seed), label))
    }

    fn from_key(key: u64) -> Self {
        Self {
            key,
            rng: ChaCha8Rng::seed_from_u64(key),
        }
    }

    /// Independent child stream; does not advance `self`.
    pub fn child(&self, label: &str) -> Self {
        Self::from_key(hash_label(self.key, label))
    }

    pub fn child_index(&self, label: &str, index: u64) -> Self {
        Self::from_key(combine(hash_label(self.key, label), index))
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

impl RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Derives a child seed (not a stream), e.g. for per-run worlds.
pub fn derive_seed(master_seed: u64, label: &str, index: u64) -> u64 {
    combine(hash_label(mix64(master_seed), label), index)
}
