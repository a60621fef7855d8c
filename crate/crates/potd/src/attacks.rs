//! Spoofed-transcript generators for the four known attacks: gluing two
//! runs, interpolating checkpoints toward stolen weights, covertly training
//! on extra data, and covertly dropping claimed data.
//!
//! Each generator produces a standard [`Transcript`] plus a ground-truth
//! [`AttackRecord`] sidecar the verifier never reads. The sidecars exist so
//! detection experiments have labels. Every generator reduces to an honest
//! transcript at its null parameter (cut at zero, zero fraction, zero
//! subtraction), which pins down the attack surface precisely.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::commitment::{Dataset, SeedCommitment};
use crate::error::{PotdError, Result};
use crate::memorization::point_losses;
use crate::prover::{gather_tokens, train_segment};
use crate::rng::{subkey, Key, Stream};
use crate::tinylm::WeightVector;
use crate::transcript::{opt_state_digest, Checkpoint, HyperParams, Transcript};

/// Ground-truth label for a spoofed transcript. Written next to the
/// transcript for experiments; no verification code path reads it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackRecord {
    pub kind: String,
    /// Segments whose claimed training does not match what happened.
    pub affected_segments: Vec<usize>,
    pub params: serde_json::Value,
}

pub const ATTACK_RECORD_FILE: &str = "attack.json";

impl AttackRecord {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let body = serde_json::to_vec_pretty(self)?;
        std::fs::write(dir.join(ATTACK_RECORD_FILE), body)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let body = std::fs::read(dir.join(ATTACK_RECORD_FILE))?;
        Ok(serde_json::from_slice(&body)?)
    }
}

/// Splice two runs: keep checkpoints `0..=i` of `ta`, then continue with
/// checkpoints `i+1..` of `tb`, while the manifest claims `ta`'s dataset and
/// seed throughout. `i = 0` with `ta == tb` degenerates to the honest
/// transcript.
///
/// The first spliced transition (segment `i+1`) claims `ta`'s data order but
/// actually jumps to `tb`'s trajectory: it shows up as a weight-delta
/// outlier, loses the long-range memorization of `ta`'s earlier segments,
/// and cannot be reproduced by retraining.
pub fn glue(ta: &Transcript, tb: &Transcript, i: usize) -> Result<(Transcript, AttackRecord)> {
    if ta.hyper.arch != tb.hyper.arch {
        return Err(PotdError::Contract("glued runs must share an architecture".into()));
    }
    let m = ta.hyper.checkpoint_count;
    if tb.hyper.checkpoint_count != m {
        return Err(PotdError::Contract("glued runs must have the same checkpoint count".into()));
    }
    if i > m {
        return Err(PotdError::Contract(format!("cut index {i} outside 0..={m}")));
    }
    let mut checkpoints = Vec::with_capacity(m + 1);
    checkpoints.extend(ta.checkpoints[..=i].iter().cloned());
    checkpoints.extend(tb.checkpoints[i + 1..].iter().cloned());
    let spoofed = Transcript {
        dataset: ta.dataset.clone(),
        hyper: ta.hyper.clone(),
        commitment: ta.commitment.clone(),
        checkpoints,
    };
    let affected: Vec<usize> = if spoofed.checkpoints == ta.checkpoints {
        Vec::new()
    } else {
        (i + 1..=m).collect()
    };
    let record = AttackRecord {
        kind: "glue".into(),
        affected_segments: affected,
        params: serde_json::json!({ "cut_index": i }),
    };
    Ok((spoofed, record))
}

/// Replace checkpoints `i+1..=m` of `ta` with convex combinations
/// `a·target + (1−a)·W_i`, ending at `a = 1` (the stolen final weights).
///
/// With `calibrate_val_loss` the mixing coefficients are chosen by grid
/// search so the validation-loss series interpolates smoothly between the
/// two endpoints, hiding the splice from the loss-smoothness screen. The
/// memorization heatmap still gives it away: interpolated checkpoints
/// memorize no segment in particular.
pub fn interpolate(
    ta: &Transcript,
    i: usize,
    target: &WeightVector,
    calibrate_val_loss: bool,
    report_seed: u64,
) -> Result<(Transcript, AttackRecord)> {
    let m = ta.hyper.checkpoint_count;
    if i >= m {
        return Err(PotdError::Contract(format!("splice index {i} leaves no checkpoints to forge")));
    }
    if target.dim() != ta.checkpoints[0].weights.dim() {
        return Err(PotdError::Contract("target weights do not match the architecture".into()));
    }
    let base = &ta.checkpoints[i].weights;
    let steps = m - i;

    let mix = |a: f64| -> WeightVector {
        let mut w = base.clone();
        for (x, t) in w.flat.iter_mut().zip(&target.flat) {
            *x = ((1.0 - a) * *x as f64 + a * *t as f64) as f32;
        }
        w
    };

    let coefficients = if calibrate_val_loss {
        calibrated_mix_coefficients(ta, i, &mix, report_seed)?
    } else {
        (1..=steps).map(|s| s as f64 / steps as f64).collect()
    };

    let mut checkpoints = ta.checkpoints[..=i].to_vec();
    for (s, &a) in coefficients.iter().enumerate() {
        let weights = mix(a);
        checkpoints.push(Checkpoint {
            index: i + 1 + s,
            weights,
            // Fabricated: the attacker has no real optimizer trajectory, so
            // the previous real state is replayed.
            opt_digest: ta.checkpoints[i].opt_digest,
            opt_state: ta.checkpoints[i].opt_state.clone(),
        });
    }
    let spoofed = Transcript {
        dataset: ta.dataset.clone(),
        hyper: ta.hyper.clone(),
        commitment: ta.commitment.clone(),
        checkpoints,
    };
    let record = AttackRecord {
        kind: "interpolate".into(),
        affected_segments: (i + 1..=m).collect(),
        params: serde_json::json!({
            "splice_index": i,
            "calibrated": calibrate_val_loss,
            "coefficients": coefficients,
        }),
    };
    Ok((spoofed, record))
}

/// Choose mixing coefficients whose validation losses linearly interpolate
/// the endpoint losses, by grid search over `a`.
fn calibrated_mix_coefficients(
    ta: &Transcript,
    i: usize,
    mix: &dyn Fn(f64) -> WeightVector,
    report_seed: u64,
) -> Result<Vec<f64>> {
    let order = ta.order()?;
    let m = ta.hyper.checkpoint_count;
    let steps = m - i;
    // The attacker can evaluate on the real holdout; a modest sample is
    // enough to place the coefficients.
    let mut rng = Stream::new(subkey(
        crate::memorization::report_key(ta, report_seed, b"interpolate"),
        b"val-sample",
    ));
    let count = order.holdout.len().min(64);
    let ids = crate::memorization::sample_points(&order.holdout, count, &mut rng);
    let loss_of = |w: &WeightVector| -> Result<f64> {
        let l = point_losses(ta, w, &ids)?;
        Ok(l.iter().sum::<f64>() / l.len() as f64)
    };
    let start = loss_of(&ta.checkpoints[i].weights)?;
    let end = loss_of(&mix(1.0))?;
    // Profile the loss along the mixing path once.
    const GRID: usize = 40;
    let mut path = Vec::with_capacity(GRID + 1);
    for g in 0..=GRID {
        let a = g as f64 / GRID as f64;
        path.push((a, loss_of(&mix(a))?));
    }
    let mut coefficients = Vec::with_capacity(steps);
    let mut floor = 0.0f64;
    for s in 1..=steps {
        if s == steps {
            coefficients.push(1.0);
            break;
        }
        let want = start + (end - start) * s as f64 / steps as f64;
        let best = path
            .iter()
            .filter(|(a, _)| *a >= floor)
            .min_by(|x, y| (x.1 - want).abs().total_cmp(&(y.1 - want).abs()))
            .map(|(a, _)| *a)
            .unwrap_or(1.0);
        floor = best;
        coefficients.push(best);
    }
    Ok(coefficients)
}

/// Run the committed training, but substitute the token stream of segment
/// `i` with `forge(claimed_tokens)`. The manifest stays honest-looking:
/// claimed dataset, claimed order, real initialization.
fn run_with_forged_segment(
    dataset: &Dataset,
    hyper: &HyperParams,
    i: usize,
    forge: &mut dyn FnMut(Vec<u32>) -> Vec<u32>,
) -> Result<Transcript> {
    hyper.validate(dataset.len())?;
    if i == 0 || i > hyper.checkpoint_count {
        return Err(PotdError::Contract(format!(
            "segment index {i} outside 1..={}",
            hyper.checkpoint_count
        )));
    }
    let commitment = SeedCommitment::commit(dataset, hyper.s_rand);
    let order = hyper.derive_order(dataset, commitment.seed)?;
    let mut w = crate::commitment::gen_init(commitment.seed, &hyper.arch)?;
    let mut state = crate::tinylm::OptimizerState::new(w.dim());
    let mut noise =
        (hyper.noise_scale > 0.0).then(|| Stream::new(subkey(commitment.seed, b"prover-noise")));
    let mut checkpoints = Vec::with_capacity(hyper.checkpoint_count + 1);
    checkpoints.push(Checkpoint {
        index: 0,
        weights: w.clone(),
        opt_digest: opt_state_digest(Some(&state)),
        opt_state: Some(state.clone()),
    });
    for seg in 1..=hyper.checkpoint_count {
        let mut tokens = gather_tokens(dataset, order.segment(seg));
        if seg == i {
            tokens = forge(tokens);
        }
        train_segment(&mut w, &mut state, &tokens, hyper, noise.as_mut(), seg)?;
        checkpoints.push(Checkpoint {
            index: seg,
            weights: w.clone(),
            opt_digest: opt_state_digest(Some(&state)),
            opt_state: Some(state.clone()),
        });
    }
    Ok(Transcript { dataset: dataset.clone(), hyper: hyper.clone(), commitment, checkpoints })
}

/// Covert data addition: segment `i` additionally trains on
/// `ceil(fraction · k)` points from `extra`, interleaved into the claimed
/// stream; the manifest never mentions them. `fraction = 0` is the honest
/// run.
pub fn add_data(
    dataset: &Dataset,
    hyper: &HyperParams,
    i: usize,
    extra: &Dataset,
    fraction: f64,
    attack_seed: Key,
) -> Result<(Transcript, AttackRecord)> {
    if fraction < 0.0 {
        return Err(PotdError::Contract(format!("addition fraction {fraction} negative")));
    }
    if extra.seq_len != dataset.seq_len || extra.vocab < dataset.vocab {
        return Err(PotdError::Contract("extra data is not shape-compatible".into()));
    }
    let inject = (fraction * hyper.segment_len as f64).ceil() as usize;
    let mut rng = Stream::new(subkey(attack_seed, b"add-data"));
    let seq_len = dataset.seq_len;
    let mut forge = |tokens: Vec<u32>| -> Vec<u32> {
        if inject == 0 {
            return tokens;
        }
        let picks = rng.sample_without_replacement(extra.len(), inject.min(extra.len()));
        let mut rows: Vec<&[u32]> = tokens.chunks_exact(seq_len).collect();
        let extra_rows: Vec<&[u32]> = picks.iter().map(|&p| extra.point(p)).collect();
        // Interleave at random positions so the additions are spread through
        // the segment rather than appended.
        let mut out_rows: Vec<&[u32]> = Vec::with_capacity(rows.len() + extra_rows.len());
        out_rows.append(&mut rows);
        for row in extra_rows {
            let pos = rng.uniform_below(out_rows.len() as u64 + 1) as usize;
            out_rows.insert(pos, row);
        }
        out_rows.concat()
    };
    let t = run_with_forged_segment(dataset, hyper, i, &mut forge)?;
    let record = AttackRecord {
        kind: "add".into(),
        affected_segments: if inject == 0 { Vec::new() } else { vec![i] },
        params: serde_json::json!({ "segment": i, "fraction": fraction, "injected": inject }),
    };
    Ok((t, record))
}

/// Covert data subtraction: segment `i` trains on a uniformly chosen
/// `(1−κ)` subset of its claimed points; the manifest claims them all.
/// `κ = 0` is the honest run.
pub fn subtract_data(
    dataset: &Dataset,
    hyper: &HyperParams,
    i: usize,
    kappa: f64,
    attack_seed: Key,
) -> Result<(Transcript, AttackRecord)> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(PotdError::Contract(format!("subtraction fraction {kappa} outside [0, 1]")));
    }
    let mut rng = Stream::new(subkey(attack_seed, b"subtract-data"));
    let seq_len = dataset.seq_len;
    let mut dropped = 0usize;
    let mut forge = |tokens: Vec<u32>| -> Vec<u32> {
        let rows: Vec<&[u32]> = tokens.chunks_exact(seq_len).collect();
        let drop = (kappa * rows.len() as f64).round() as usize;
        if drop == 0 {
            return tokens;
        }
        dropped = drop;
        let mut keep = vec![true; rows.len()];
        for p in rng.sample_without_replacement(rows.len(), drop) {
            keep[p] = false;
        }
        rows.iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .flat_map(|(r, _)| r.iter().copied())
            .collect()
    };
    let t = run_with_forged_segment(dataset, hyper, i, &mut forge)?;
    let record = AttackRecord {
        kind: "subtract".into(),
        affected_segments: if dropped == 0 { Vec::new() } else { vec![i] },
        params: serde_json::json!({ "segment": i, "kappa": kappa, "dropped": dropped }),
    };
    Ok((t, record))
}
