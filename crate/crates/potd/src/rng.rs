//! Deterministic randomness primitives shared by the whole toolkit.
//!
//! Every random quantity in the pipeline is drawn from a ChaCha20 keystream
//! keyed by a 256-bit value, so that any party holding the key reproduces the
//! exact same bytes on any platform. Gaussian variates use Box-Muller on top
//! of the raw stream rather than a library distribution, so the sampled values
//! are pinned by this crate alone.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

/// 256-bit key / digest used throughout the commitment scheme.
pub type Key = [u8; 32];

/// Keystream keyed by a 256-bit value.
pub struct Stream {
    rng: ChaCha20Rng,
    /// Spare Gaussian variate from the last Box-Muller pair.
    spare: Option<f64>,
}

impl Stream {
    pub fn new(key: Key) -> Self {
        Stream { rng: ChaCha20Rng::from_seed(key), spare: None }
    }

    /// Stream keyed by `H(key || label)`, for carving independent substreams
    /// out of one committed seed.
    pub fn labeled(key: Key, label: &[u8]) -> Self {
        Stream::new(subkey(key, label))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform integer in `[0, bound)` via rejection sampling (unbiased).
    pub fn uniform_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "uniform_below: bound must be positive");
        let zone = u64::MAX - u64::MAX % bound;
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % bound;
            }
        }
    }

    /// Uniform float in (0, 1], using 53 bits of the stream.
    pub fn uniform_unit(&mut self) -> f64 {
        let bits = self.next_u64() >> 11;
        (bits as f64 + 1.0) / (1u64 << 53) as f64
    }

    /// Standard Gaussian via Box-Muller.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform_unit();
        let u2 = self.uniform_unit();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// In-place Fisher-Yates shuffle driven by this stream.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.uniform_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// Sample `count` distinct indices from `[0, n)` without replacement,
    /// in stream order.
    pub fn sample_without_replacement(&mut self, n: usize, count: usize) -> Vec<usize> {
        assert!(count <= n, "cannot sample {count} of {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let j = self.uniform_below(pool.len() as u64) as usize;
            out.push(pool.swap_remove(j));
        }
        out
    }
}

/// `H(key || label)` as a fresh 256-bit key.
pub fn subkey(key: Key, label: &[u8]) -> Key {
    let mut h = Sha256::new();
    h.update(key);
    h.update(label);
    h.finalize().into()
}
