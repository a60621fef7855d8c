//! The on-disk training transcript: manifest, checkpoint storage, and
//! structural re-verification.
//!
//! A transcript directory holds the dataset file, the point-hash list, one
//! binary checkpoint file per saved index, optional optimizer-state dumps,
//! and a JSON manifest tying everything together with SHA-256 digests.
//! Checkpoint payloads are raw little-endian `f32` in shape-table order so
//! equality comparisons are bit-exact across platforms.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commitment::{
    derive_seed, gen_init, gen_order, read_dataset, write_dataset, write_hashes, DataOrder,
    Dataset, SeedCommitment,
};
use crate::error::{PotdError, Result};
use crate::rng::Key;
use crate::tinylm::{ArchConfig, OptimizerConfig, OptimizerState, TensorShape, WeightVector};

pub const MANIFEST_VERSION: u32 = 1;

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub arch: ArchConfig,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    /// Segment length `k`: datapoints trained between consecutive checkpoints.
    pub segment_len: usize,
    /// Checkpoint count `m` (checkpoints 0..=m are stored).
    pub checkpoint_count: usize,
    pub epochs: usize,
    /// Validation holdout size.
    pub n_v: usize,
    /// Prover-chosen 32-bit seed component.
    pub s_rand: u32,
    /// Simulated hardware-noise scale (0 disables the channel).
    pub noise_scale: f64,
    /// Dump full optimizer state per checkpoint (digest is always recorded).
    pub store_optimizer_state: bool,
}

impl HyperParams {
    /// Check the segment-tiling invariant against a dataset of `n` points.
    pub fn validate(&self, n: usize) -> Result<()> {
        self.arch.validate()?;
        if self.batch_size == 0 {
            return Err(PotdError::Config("batch size must be positive".into()));
        }
        if self.n_v == 0 || self.n_v >= n {
            return Err(PotdError::Config(format!("holdout {} must be in [1, n)", self.n_v)));
        }
        let train = n - self.n_v;
        if 2 * self.segment_len > train {
            return Err(PotdError::Config(format!(
                "segment length {} violates k <= (n - n_v)/2 = {}",
                self.segment_len,
                train / 2
            )));
        }
        if self.checkpoint_count * self.segment_len != self.epochs * train {
            return Err(PotdError::Config(format!(
                "segments do not tile training: m*k = {} but epochs*(n - n_v) = {}",
                self.checkpoint_count * self.segment_len,
                self.epochs * train
            )));
        }
        Ok(())
    }

    pub fn derive_order(&self, dataset: &Dataset, seed: Key) -> Result<DataOrder> {
        gen_order(seed, dataset.len(), self.n_v, self.segment_len, self.epochs)
    }

    /// Total optimizer steps in a full run, for the LR schedule.
    pub fn total_steps(&self) -> u64 {
        let per_segment = self.segment_len.div_ceil(self.batch_size) as u64;
        per_segment * self.checkpoint_count as u64
    }
}

impl Default for HyperParams {
    /// Desk-scale defaults: n = 2200 points, 200 held out, ten segments of
    /// 200 points each, one epoch, noise channel off.
    fn default() -> Self {
        HyperParams {
            arch: ArchConfig::default(),
            optimizer: OptimizerConfig::default(),
            batch_size: 16,
            segment_len: 200,
            checkpoint_count: 10,
            epochs: 1,
            n_v: 200,
            s_rand: 0,
            noise_scale: 0.0,
            store_optimizer_state: true,
        }
    }
}

/// One stored checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub index: usize,
    pub weights: WeightVector,
    pub opt_digest: Key,
    pub opt_state: Option<OptimizerState>,
}

/// In-memory transcript `T = {D, M, W}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub dataset: Dataset,
    pub hyper: HyperParams,
    pub commitment: SeedCommitment,
    pub checkpoints: Vec<Checkpoint>,
}

impl Transcript {
    pub fn final_weights(&self) -> &WeightVector {
        &self.checkpoints.last().expect("transcript has checkpoints").weights
    }

    /// Identity digest over commitment and checkpoint payloads.
    pub fn digest(&self) -> Key {
        let mut h = Sha256::new();
        h.update(self.commitment.dataset_digest);
        h.update(self.commitment.seed);
        for c in &self.checkpoints {
            h.update(sha256(&encode_weights(&c.weights)));
        }
        h.finalize().into()
    }

    pub fn order(&self) -> Result<DataOrder> {
        self.hyper.derive_order(&self.dataset, self.commitment.seed)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestCheckpoint {
    index: usize,
    file: String,
    digest: String,
    opt_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    opt_file: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    dataset_file: String,
    dataset_digest: String,
    hashes_file: String,
    seed: String,
    s_rand: u32,
    seed_chain: Vec<String>,
    hyper: HyperParams,
    final_digest: String,
    checkpoints: Vec<ManifestCheckpoint>,
}

fn sha256(bytes: &[u8]) -> Key {
    Sha256::digest(bytes).into()
}

/// Binary checkpoint payload: shape table then little-endian `f32` weights.
pub fn encode_weights(w: &WeightVector) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64 + w.flat.len() * 4);
    buf.extend_from_slice(&(w.shapes.len() as u32).to_le_bytes());
    for t in &w.shapes {
        buf.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.push(t.dims.len() as u8);
        for &d in &t.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for &x in &w.flat {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf
}

pub fn decode_weights(bytes: &[u8]) -> Result<WeightVector> {
    let bad = |what: &str| PotdError::Integrity(format!("checkpoint payload: {what}"));
    let mut at = 0usize;
    let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
        if *at + n > bytes.len() {
            return Err(bad("truncated"));
        }
        let s = &bytes[*at..*at + n];
        *at += n;
        Ok(s)
    };
    let count = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut at, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut at, name_len)?.to_vec())
            .map_err(|_| bad("tensor name not utf-8"))?;
        let ndims = take(&mut at, 1)?[0] as usize;
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize);
        }
        shapes.push(TensorShape { name, dims });
    }
    let d: usize = shapes.iter().map(|t| t.len()).sum();
    let body = take(&mut at, d * 4)?;
    if at != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    let flat = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(WeightVector { flat, shapes })
}

pub fn encode_opt_state(s: &OptimizerState) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + s.m.len() * 8);
    buf.extend_from_slice(&s.step.to_le_bytes());
    buf.extend_from_slice(&(s.m.len() as u64).to_le_bytes());
    for &x in s.m.iter().chain(s.v.iter()) {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf
}

pub fn decode_opt_state(bytes: &[u8]) -> Result<OptimizerState> {
    if bytes.len() < 16 {
        return Err(PotdError::Integrity("optimizer payload truncated".into()));
    }
    let step = u64::from_le_bytes(bytes[..8].try_into().unwrap());
    let d = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() != 16 + d * 8 {
        return Err(PotdError::Integrity("optimizer payload length mismatch".into()));
    }
    let floats: Vec<f32> =
        bytes[16..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(OptimizerState { step, m: floats[..d].to_vec(), v: floats[d..].to_vec() })
}

/// Digest of a checkpoint's optimizer state (all-zero key when absent).
pub fn opt_state_digest(state: Option<&OptimizerState>) -> Key {
    match state {
        Some(s) => sha256(&encode_opt_state(s)),
        None => [0u8; 32],
    }
}

pub fn save_transcript(t: &Transcript, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_dataset(&t.dataset, &dir.join("dataset.potd"))?;
    write_hashes(&t.dataset, &dir.join("hashes.bin"))?;
    let mut entries = Vec::with_capacity(t.checkpoints.len());
    for c in &t.checkpoints {
        let file = format!("ckpt_{:03}.bin", c.index);
        let payload = encode_weights(&c.weights);
        fs::File::create(dir.join(&file))?.write_all(&payload)?;
        let opt_file = match (&c.opt_state, t.hyper.store_optimizer_state) {
            (Some(state), true) => {
                let name = format!("opt_{:03}.bin", c.index);
                fs::File::create(dir.join(&name))?.write_all(&encode_opt_state(state))?;
                Some(name)
            }
            _ => None,
        };
        entries.push(ManifestCheckpoint {
            index: c.index,
            file,
            digest: hex::encode(sha256(&payload)),
            opt_digest: hex::encode(c.opt_digest),
            opt_file,
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        dataset_file: "dataset.potd".into(),
        dataset_digest: hex::encode(t.commitment.dataset_digest),
        hashes_file: "hashes.bin".into(),
        seed: hex::encode(t.commitment.seed),
        s_rand: t.commitment.s_rand,
        seed_chain: t.commitment.chain.iter().map(hex::encode).collect(),
        hyper: t.hyper.clone(),
        final_digest: entries.last().map(|e| e.digest.clone()).unwrap_or_default(),
        checkpoints: entries,
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    fs::File::create(dir.join("manifest.json"))?.write_all(&json)?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

fn parse_key(hexstr: &str, what: &str) -> Result<Key> {
    let bytes = hex::decode(hexstr)
        .map_err(|_| PotdError::Integrity(format!("manifest: bad hex in {what}")))?;
    bytes
        .as_slice()
        .try_into()
        .map_err(|_| PotdError::Integrity(format!("manifest: {what} is not 32 bytes")))
}

pub fn load_transcript(dir: &Path) -> Result<Transcript> {
    let manifest: Manifest = serde_json::from_slice(&read_file(&dir.join("manifest.json"))?)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(PotdError::Integrity(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    let dataset = read_dataset(&dir.join(&manifest.dataset_file))?;
    let dataset_digest = parse_key(&manifest.dataset_digest, "dataset digest")?;
    if dataset.digest() != dataset_digest {
        return Err(PotdError::Integrity("dataset does not match its recorded digest".into()));
    }
    let mut checkpoints = Vec::with_capacity(manifest.checkpoints.len());
    for e in &manifest.checkpoints {
        let payload = read_file(&dir.join(&e.file))?;
        if hex::encode(sha256(&payload)) != e.digest {
            return Err(PotdError::Integrity(format!(
                "checkpoint {} does not match its recorded digest",
                e.index
            )));
        }
        let weights = decode_weights(&payload)?;
        let opt_digest = parse_key(&e.opt_digest, "optimizer digest")?;
        let opt_state = match &e.opt_file {
            Some(name) => {
                let bytes = read_file(&dir.join(name))?;
                if sha256(&bytes) != opt_digest {
                    return Err(PotdError::Integrity(format!(
                        "optimizer state {} does not match its recorded digest",
                        e.index
                    )));
                }
                Some(decode_opt_state(&bytes)?)
            }
            None => None,
        };
        checkpoints.push(Checkpoint { index: e.index, weights, opt_digest, opt_state });
    }
    let commitment = SeedCommitment {
        seed: parse_key(&manifest.seed, "seed")?,
        s_rand: manifest.s_rand,
        dataset_digest,
        chain: manifest
            .seed_chain
            .iter()
            .map(|s| parse_key(s, "seed chain"))
            .collect::<Result<_>>()?,
    };
    Ok(Transcript { dataset, hyper: manifest.hyper, commitment, checkpoints })
}

/// Outcome of one structural check step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureStep {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Result of the structural checks (failures are results, not errors).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureReport {
    pub pass: bool,
    pub steps: Vec<StructureStep>,
}

impl StructureReport {
    pub fn first_failure(&self) -> Option<&StructureStep> {
        self.steps.iter().find(|s| !s.pass)
    }
}

/// Re-derive the commitment from the dataset alone and compare every claimed
/// quantity: checkpoint chain shape, point hashes, seed, W0, and the order
/// constraints. Stops recording checks after the first failure only insofar
/// as later steps depend on earlier ones.
pub fn verify_structure(t: &Transcript) -> StructureReport {
    let mut steps: Vec<StructureStep> = Vec::new();
    let mut record = |name: &str, pass: bool, detail: String| -> bool {
        steps.push(StructureStep { name: name.into(), pass, detail });
        pass
    };

    let m = t.hyper.checkpoint_count;
    let chain_ok = t.checkpoints.len() == m + 1
        && t.checkpoints.iter().enumerate().all(|(i, c)| c.index == i);
    record(
        "checkpoint-chain",
        chain_ok,
        format!("{} checkpoints for m = {m}", t.checkpoints.len()),
    );

    let hyper_ok = t.hyper.validate(t.dataset.len()).is_ok();
    record("hyperparameters", hyper_ok, format!("n = {}", t.dataset.len()));

    let hashes_ok = t.dataset.verify_hashes()
        && t.dataset.digest() == t.commitment.dataset_digest;
    record("dataset-hashes", hashes_ok, "recomputed point hashes".into());

    let seed_ok = hashes_ok
        && derive_seed(t.dataset.point_hashes(), t.commitment.s_rand) == t.commitment.seed;
    record("seed-derivation", seed_ok, "s = H(H(d_1) || ... || s_rand)".into());

    let init_ok = seed_ok
        && !t.checkpoints.is_empty()
        && gen_init(t.commitment.seed, &t.hyper.arch)
            .map(|w0| w0.flat == t.checkpoints[0].weights.flat)
            .unwrap_or(false);
    record("init-weights", init_ok, "W0 == G_r(s) bitwise".into());

    let order_ok = seed_ok
        && hyper_ok
        && t.order().map(|o| o.segment_count() == m).unwrap_or(false);
    record("data-order", order_ok, "S = G_p(s) tiles into m segments".into());

    StructureReport { pass: steps.iter().all(|s| s.pass), steps }
}

/// Resolve a transcript directory from a CLI argument.
pub fn transcript_dir(arg: &str) -> PathBuf {
    PathBuf::from(arg)
}
