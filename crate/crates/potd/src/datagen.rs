//! Synthetic dataset generation for desk-scale experiments.
//!
//! Sequences are drawn from a seeded first-order Markov source. The shared
//! transition structure gives the model something to learn (so validation
//! loss decays over training), while each point's concrete token windows are
//! still individually rare enough to leave a per-point memorization trace.

use crate::commitment::Dataset;
use crate::error::Result;
use crate::rng::{Key, Stream};

#[derive(Debug, Clone, Copy)]
pub struct DataGenConfig {
    pub n: usize,
    pub seq_len: usize,
    pub vocab: usize,
    /// Sharpness of the Markov transition rows; 0 gives a uniform source.
    pub sharpness: f64,
}

impl Default for DataGenConfig {
    fn default() -> Self {
        DataGenConfig { n: 2_200, seq_len: 64, vocab: 96, sharpness: 1.5 }
    }
}

/// Sample a dataset from a seeded Markov source.
pub fn gen_dataset(seed: Key, cfg: &DataGenConfig) -> Result<Dataset> {
    let v = cfg.vocab;
    let mut s = Stream::labeled(seed, b"datagen");
    // row-stochastic transition matrix, CDF form for sampling
    let mut cdf = vec![0.0f64; v * v];
    for row in cdf.chunks_exact_mut(v) {
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = (cfg.sharpness * s.gaussian()).exp();
            total += *x;
        }
        let mut acc = 0.0;
        for x in row.iter_mut() {
            acc += *x / total;
            *x = acc;
        }
    }
    let mut tokens = Vec::with_capacity(cfg.n * cfg.seq_len);
    for _ in 0..cfg.n {
        let mut prev = s.uniform_below(v as u64) as usize;
        tokens.push(prev as u32);
        for _ in 1..cfg.seq_len {
            let u = s.uniform_unit();
            let row = &cdf[prev * v..(prev + 1) * v];
            let next = row.partition_point(|&c| c < u).min(v - 1);
            tokens.push(next as u32);
            prev = next;
        }
    }
    Dataset::new(tokens, cfg.n, cfg.seq_len, cfg.vocab)
}
