//! The honest Prover: run committed training end-to-end and emit a
//! transcript, and re-execute arbitrary segments on demand.

use crate::commitment::{gen_init, Dataset, SeedCommitment};
use crate::error::{PotdError, Result};
use crate::rng::{subkey, Key, Stream};
use crate::tinylm::{train_step, Batch, OptimizerState, WeightVector};
use crate::transcript::{opt_state_digest, Checkpoint, HyperParams, Transcript};

/// Flatten the token sequences for a list of point ids.
pub fn gather_tokens(dataset: &Dataset, ids: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(ids.len() * dataset.seq_len);
    for &id in ids {
        out.extend_from_slice(dataset.point(id as usize));
    }
    out
}

/// Train over one segment's sequences in committed order, batch by batch
/// (the final batch may be short). `tokens` is row-major `rows x seq_len`.
pub fn train_segment(
    w: &mut WeightVector,
    state: &mut OptimizerState,
    tokens: &[u32],
    hyper: &HyperParams,
    mut noise: Option<&mut Stream>,
    segment_index: usize,
) -> Result<()> {
    let seq_len = hyper.arch.seq_len;
    let rows = tokens.len() / seq_len;
    let mut at = 0;
    while at < rows {
        let take = hyper.batch_size.min(rows - at);
        let batch =
            Batch::new(tokens[at * seq_len..(at + take) * seq_len].to_vec(), take, seq_len)?;
        let step_noise = noise.as_deref_mut().map(|s| (s, hyper.noise_scale));
        train_step(w, state, &batch, &hyper.arch, &hyper.optimizer, step_noise).map_err(|e| {
            match e {
                PotdError::Training { tensor, .. } => {
                    PotdError::Training { segment: segment_index, tensor }
                }
                other => other,
            }
        })?;
        at += take;
    }
    Ok(())
}

/// Execute the full committed training run and emit a transcript.
///
/// With the noise channel off this is a pure function of `(dataset, hyper)`;
/// repeated runs produce byte-identical transcripts.
pub fn train_run(dataset: &Dataset, hyper: &HyperParams) -> Result<Transcript> {
    let commitment = SeedCommitment::commit(dataset, hyper.s_rand);
    let noise_seed = subkey(commitment.seed, b"prover-noise");
    train_run_with_noise(dataset, hyper, noise_seed)
}

/// As [`train_run`], with an explicit seed for the simulated hardware-noise
/// channel (ignored when `hyper.noise_scale == 0`).
pub fn train_run_with_noise(
    dataset: &Dataset,
    hyper: &HyperParams,
    noise_seed: Key,
) -> Result<Transcript> {
    hyper.validate(dataset.len())?;
    let commitment = SeedCommitment::commit(dataset, hyper.s_rand);
    let order = hyper.derive_order(dataset, commitment.seed)?;
    let mut w = gen_init(commitment.seed, &hyper.arch)?;
    let mut state = OptimizerState::new(w.dim());
    let mut noise =
        (hyper.noise_scale > 0.0).then(|| Stream::new(noise_seed));

    let mut checkpoints = Vec::with_capacity(hyper.checkpoint_count + 1);
    checkpoints.push(Checkpoint {
        index: 0,
        weights: w.clone(),
        opt_digest: opt_state_digest(Some(&state)),
        opt_state: Some(state.clone()),
    });
    for i in 1..=hyper.checkpoint_count {
        let tokens = gather_tokens(dataset, order.segment(i));
        train_segment(&mut w, &mut state, &tokens, hyper, noise.as_mut(), i)?;
        checkpoints.push(Checkpoint {
            index: i,
            weights: w.clone(),
            opt_digest: opt_state_digest(Some(&state)),
            opt_state: Some(state.clone()),
        });
    }
    Ok(Transcript { dataset: dataset.clone(), hyper: hyper.clone(), commitment, checkpoints })
}

/// Re-execute segment `i` of a transcript from checkpoint `i - 1` under the
/// committed data order, returning the reproduced checkpoint.
///
/// With the noise channel off the result is bit-identical to the honest
/// `W_i`; with noise on the deviation scales with the noise magnitude.
pub fn retrain_segment(t: &Transcript, i: usize, noise_seed: Option<Key>) -> Result<WeightVector> {
    if i == 0 || i > t.hyper.checkpoint_count {
        return Err(PotdError::Contract(format!(
            "segment index {i} outside 1..={}",
            t.hyper.checkpoint_count
        )));
    }
    let prev = &t.checkpoints[i - 1];
    let mut w = prev.weights.clone();
    let mut state = prev
        .opt_state
        .clone()
        .ok_or_else(|| {
            PotdError::Contract(format!("checkpoint {} has no optimizer state dump", i - 1))
        })?;
    let order = t.order()?;
    let tokens = gather_tokens(&t.dataset, order.segment(i));
    let mut noise = match (t.hyper.noise_scale > 0.0, noise_seed) {
        (true, Some(seed)) => Some(Stream::new(seed)),
        (true, None) => Some(Stream::new(subkey(t.commitment.seed, b"verifier-noise"))),
        (false, _) => None,
    };
    train_segment(&mut w, &mut state, &tokens, &t.hyper, noise.as_mut(), i)?;
    Ok(w)
}
