//! Dataset hashing, dataset-dependent seed derivation, certified-random
//! initialization and data ordering, and the validation holdout.
//!
//! The seed is `s = H(H(d_1) || H(d_2) || ... || H(d_n) || s_rand)` with H
//! fixed to SHA-256. The initialization and permutation generators are
//! ChaCha20 keystreams keyed by labeled subkeys of `s`, so a Verifier holding
//! the dataset (or just its point hashes) re-derives everything bit-exactly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{PotdError, Result};
use crate::rng::{subkey, Key, Stream};
use crate::tinylm::{init_weights, ArchConfig, WeightVector};

pub const DATASET_MAGIC: &[u8; 4] = b"POTD";
pub const DATASET_VERSION: u32 = 1;

/// Ordered training dataset: `n` fixed-length token sequences plus one
/// content hash per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub seq_len: usize,
    pub vocab: usize,
    tokens: Vec<u32>,
    point_hashes: Vec<Key>,
}

impl Dataset {
    pub fn new(tokens: Vec<u32>, n: usize, seq_len: usize, vocab: usize) -> Result<Self> {
        if n < 2 {
            return Err(PotdError::Config("dataset needs at least 2 points".into()));
        }
        if tokens.len() != n * seq_len {
            return Err(PotdError::Contract(format!(
                "{} tokens do not fill {n} points of length {seq_len}",
                tokens.len()
            )));
        }
        if tokens.iter().any(|&t| t as usize >= vocab) {
            return Err(PotdError::Contract("token id out of vocabulary".into()));
        }
        let point_hashes = tokens.chunks_exact(seq_len).map(hash_point).collect();
        Ok(Dataset { seq_len, vocab, tokens, point_hashes })
    }

    pub fn len(&self) -> usize {
        self.point_hashes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_hashes.is_empty()
    }

    pub fn point(&self, i: usize) -> &[u32] {
        &self.tokens[i * self.seq_len..(i + 1) * self.seq_len]
    }

    pub fn point_hashes(&self) -> &[Key] {
        &self.point_hashes
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    /// Recheck that every stored hash matches its point.
    pub fn verify_hashes(&self) -> bool {
        self.tokens
            .chunks_exact(self.seq_len)
            .zip(&self.point_hashes)
            .all(|(p, h)| hash_point(p) == *h)
    }

    /// Digest over the whole hash list, used as the dataset identity.
    pub fn digest(&self) -> Key {
        let mut h = Sha256::new();
        for ph in &self.point_hashes {
            h.update(ph);
        }
        h.finalize().into()
    }
}

/// SHA-256 over the canonical serialization of one point: 8-byte LE token
/// count, then 4-byte LE token ids.
pub fn hash_point(point: &[u32]) -> Key {
    let mut h = Sha256::new();
    h.update((point.len() as u64).to_le_bytes());
    for t in point {
        h.update(t.to_le_bytes());
    }
    h.finalize().into()
}

/// `s = H(concat(point-hashes) || s_rand)`.
pub fn derive_seed(point_hashes: &[Key], s_rand: u32) -> Key {
    assert!(!point_hashes.is_empty(), "derive_seed needs at least one hash");
    let mut h = Sha256::new();
    for ph in point_hashes {
        h.update(ph);
    }
    h.update(s_rand.to_le_bytes());
    h.finalize().into()
}

/// The committed seed and what it was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedCommitment {
    pub seed: Key,
    pub s_rand: u32,
    pub dataset_digest: Key,
    /// Seeds of earlier stages when extended batch-online, oldest first.
    pub chain: Vec<Key>,
}

impl SeedCommitment {
    pub fn commit(dataset: &Dataset, s_rand: u32) -> Self {
        SeedCommitment {
            seed: derive_seed(dataset.point_hashes(), s_rand),
            s_rand,
            dataset_digest: dataset.digest(),
            chain: Vec::new(),
        }
    }

    /// Batch-online extension: a fresh seed for the next dataset stage,
    /// with the previous stage's seed retained on the chain.
    pub fn extend_online(&self, next_hashes: &[Key], s_rand: u32) -> Result<Self> {
        if next_hashes.is_empty() {
            return Err(PotdError::Config("next stage dataset is empty".into()));
        }
        let mut chain = self.chain.clone();
        chain.push(self.seed);
        let mut h = Sha256::new();
        for ph in next_hashes {
            h.update(ph);
        }
        Ok(SeedCommitment {
            seed: derive_seed(next_hashes, s_rand),
            s_rand,
            dataset_digest: h.finalize().into(),
            chain,
        })
    }
}

/// Committed data order: per-epoch permutations of the training indices,
/// with the last `n_v` positions of the base permutation held out for
/// validation across all epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct DataOrder {
    pub n: usize,
    pub n_v: usize,
    pub segment_len: usize,
    pub epochs: usize,
    /// Validation point ids (the holdout), disjoint from every segment.
    pub holdout: Vec<u32>,
    /// Training stream: `epochs * (n - n_v)` point ids in committed order.
    pub schedule: Vec<u32>,
}

impl DataOrder {
    pub fn segment_count(&self) -> usize {
        self.schedule.len().div_ceil(self.segment_len)
    }

    /// Point ids of segment `i` (1-based, matching checkpoint indices).
    pub fn segment(&self, i: usize) -> &[u32] {
        let start = (i - 1) * self.segment_len;
        let end = (start + self.segment_len).min(self.schedule.len());
        &self.schedule[start..end]
    }
}

/// Derive the committed data order from the seed. Epoch `e` shuffles the
/// training indices with a stream keyed by `H(s || "order" || e)`; the
/// holdout is the tail of the epoch-0 permutation and is excluded from
/// every later epoch.
pub fn gen_order(seed: Key, n: usize, n_v: usize, k: usize, epochs: usize) -> Result<DataOrder> {
    if n_v == 0 || n_v >= n {
        return Err(PotdError::Config(format!("holdout size {n_v} must be in [1, n)")));
    }
    let train = n - n_v;
    if k == 0 || 2 * k > train {
        return Err(PotdError::Config(format!(
            "segment length {k} must satisfy k <= (n - n_v)/2 = {}",
            train / 2
        )));
    }
    if epochs == 0 {
        return Err(PotdError::Config("epochs must be >= 1".into()));
    }
    let mut base: Vec<u32> = (0..n as u32).collect();
    Stream::labeled(seed, b"order\x00").shuffle(&mut base);
    let holdout = base.split_off(train);
    let mut schedule = Vec::with_capacity(epochs * train);
    schedule.extend_from_slice(&base);
    for e in 1..epochs {
        let mut label = b"order".to_vec();
        label.push(e as u8);
        let mut epoch = base.clone();
        Stream::labeled(seed, &label).shuffle(&mut epoch);
        schedule.extend_from_slice(&epoch);
    }
    Ok(DataOrder { n, n_v, segment_len: k, epochs, holdout, schedule })
}

/// Certified-random initialization `W_0 = G_r(s)`.
pub fn gen_init(seed: Key, arch: &ArchConfig) -> Result<WeightVector> {
    init_weights(subkey(seed, b"init"), arch)
}

/// Write the dataset file: magic, version, n, seq_len, vocab, packed ids.
pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + dataset.tokens.len() * 4);
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(dataset.seq_len as u32).to_le_bytes());
    buf.extend_from_slice(&(dataset.vocab as u32).to_le_bytes());
    for t in &dataset.tokens {
        buf.extend_from_slice(&t.to_le_bytes());
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 24 || &buf[..4] != DATASET_MAGIC {
        return Err(PotdError::Integrity(format!("{}: not a dataset file", path.display())));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(PotdError::Integrity(format!("unsupported dataset version {version}")));
    }
    let n = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
    let seq_len = u32::from_le_bytes(buf[16..20].try_into().unwrap()) as usize;
    let vocab = u32::from_le_bytes(buf[20..24].try_into().unwrap()) as usize;
    let body = &buf[24..];
    if body.len() != n * seq_len * 4 {
        return Err(PotdError::Integrity(format!("{}: truncated dataset file", path.display())));
    }
    let tokens = body.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
    Dataset::new(tokens, n, seq_len, vocab)
}

/// Write the `n x 32` byte hash list alongside the dataset.
pub fn write_hashes(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(dataset.len() * 32);
    for h in dataset.point_hashes() {
        buf.extend_from_slice(h);
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_hashes(path: &Path) -> Result<Vec<Key>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() % 32 != 0 {
        return Err(PotdError::Integrity(format!("{}: bad hash file length", path.display())));
    }
    Ok(buf.chunks_exact(32).map(|c| c.try_into().unwrap()).collect())
}
