//! Per-point memorization statistics over a training transcript.
//!
//! The memorization score of a point `d` at weights `W` is the mean
//! validation loss minus the point's own loss: points the model has trained
//! on recently score high, points it has never seen score near zero. The
//! memorization delta between consecutive checkpoints localizes *when* a
//! point was learned, which is what the verifier's data-order test keys on.
//!
//! All sampling is seeded from `(transcript digest, report seed)` so an audit
//! is reproducible given the report seed, yet the sample is unpredictable to
//! whoever produced the transcript.

use serde::{Deserialize, Serialize};

use crate::commitment::DataOrder;
use crate::error::{PotdError, Result};
use crate::prover::gather_tokens;
use crate::rng::{Key, Stream};
use crate::stats::quantile;
use crate::tinylm::{forward_losses, Batch, WeightVector};
use crate::transcript::Transcript;

/// Per-point losses for the given point ids at the given weights.
pub fn point_losses(t: &Transcript, w: &WeightVector, ids: &[u32]) -> Result<Vec<f64>> {
    if ids.is_empty() {
        return Err(PotdError::Contract("loss evaluation over an empty id list".into()));
    }
    let tokens = gather_tokens(&t.dataset, ids);
    let batch = Batch::new(tokens, ids.len(), t.dataset.seq_len)?;
    forward_losses(w, &t.hyper.arch, &batch)
}

/// Memorization score: mean validation loss minus the point's loss.
pub fn memorization(point_loss: f64, mean_val_loss: f64) -> f64 {
    mean_val_loss - point_loss
}

/// Memorization delta of one point across a checkpoint transition.
///
/// Equals `memorization(d, W_i) - memorization(d, W_prev)` with each term
/// using that checkpoint's own validation mean.
pub fn memorization_delta(
    point_loss_at_i: f64,
    point_loss_at_prev: f64,
    mean_val_loss_at_i: f64,
    mean_val_loss_at_prev: f64,
) -> f64 {
    memorization(point_loss_at_i, mean_val_loss_at_i)
        - memorization(point_loss_at_prev, mean_val_loss_at_prev)
}

/// A fixed sample of validation points with per-checkpoint losses.
///
/// The same sample is reused across every checkpoint it is evaluated at, so
/// validation means are comparable along the trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValSummary {
    pub ids: Vec<u32>,
    /// `losses[i]` is the per-point loss vector at checkpoint `i`; empty for
    /// checkpoints never evaluated.
    pub losses: Vec<Vec<f64>>,
    pub means: Vec<f64>,
}

impl ValSummary {
    /// Sample `count` validation points (all of them if `count >= n_v`) and
    /// evaluate them at every checkpoint.
    pub fn build(t: &Transcript, order: &DataOrder, count: usize, rng: &mut Stream) -> Result<Self> {
        let count = count.clamp(1, order.holdout.len());
        let picks = rng.sample_without_replacement(order.holdout.len(), count);
        let ids: Vec<u32> = picks.iter().map(|&j| order.holdout[j]).collect();
        let mut losses = Vec::with_capacity(t.checkpoints.len());
        let mut means = Vec::with_capacity(t.checkpoints.len());
        for ck in &t.checkpoints {
            let l = point_losses(t, &ck.weights, &ids)?;
            means.push(l.iter().sum::<f64>() / l.len() as f64);
            losses.push(l);
        }
        Ok(ValSummary { ids, losses, means })
    }

    /// Per-point validation memorization deltas across `prev -> i`, against
    /// the summary's own means. Centered on zero for honest checkpoints.
    pub fn deltas(&self, i: usize, prev: usize) -> Vec<f64> {
        self.losses[i]
            .iter()
            .zip(&self.losses[prev])
            .map(|(&li, &lp)| memorization_delta(li, lp, self.means[i], self.means[prev]))
            .collect()
    }
}

/// Sampled memorization grid: one row per segment, one column per checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemorizationMatrix {
    pub alpha: f64,
    pub beta: usize,
    /// Segment count `m`; rows are segments 1..=m.
    pub segments: usize,
    /// Mean memorization of the row's sample at each checkpoint; NaN outside
    /// the `±beta` window around the row's own checkpoint.
    pub mean_m: Vec<Vec<f64>>,
    /// Mean memorization delta across `j-1 -> j`; NaN where either end is
    /// outside the window (and in column 0).
    pub mean_dm: Vec<Vec<f64>>,
    /// Sampled point ids per segment.
    pub sample_ids: Vec<Vec<u32>>,
    /// Per-point memorization values behind each grid cell:
    /// `point_m[row][col]` aligns with `sample_ids[row]`; empty outside the
    /// window.
    pub point_m: Vec<Vec<Vec<f64>>>,
    /// Set when `ceil(alpha * k) < 5`: cell statistics are unreliable.
    pub small_sample_warning: bool,
}

impl MemorizationMatrix {
    /// Checkpoint index with the highest mean memorization in each row.
    pub fn row_argmax(&self) -> Vec<usize> {
        self.mean_m
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, v)| v.is_finite())
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(j, _)| j)
                    .unwrap_or(0)
            })
            .collect()
    }

    /// Fraction of rows whose argmax checkpoint is the row's own checkpoint.
    pub fn diagonal_fraction(&self) -> f64 {
        let hits = self
            .row_argmax()
            .iter()
            .enumerate()
            .filter(|&(row, &arg)| arg == row + 1)
            .count();
        hits as f64 / self.segments as f64
    }
}

/// Derive the audit sampling key from the transcript digest and a report
/// seed, so the sample is reproducible but not prover-predictable.
pub fn report_key(t: &Transcript, report_seed: u64, label: &[u8]) -> Key {
    let mut material = t.digest().to_vec();
    material.extend_from_slice(&report_seed.to_le_bytes());
    material.extend_from_slice(label);
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(&material);
    h.finalize().into()
}

/// Sample `count` ids from a pool without replacement (clamped to the pool).
pub fn sample_points(pool: &[u32], count: usize, rng: &mut Stream) -> Vec<u32> {
    let count = count.clamp(1, pool.len());
    let picks = rng.sample_without_replacement(pool.len(), count);
    picks.iter().map(|&j| pool[j]).collect()
}

/// Sample `ceil(alpha * len)` ids from a segment (at least 1).
fn sample_segment(segment: &[u32], alpha: f64, rng: &mut Stream) -> Vec<u32> {
    let count = (alpha * segment.len() as f64).ceil() as usize;
    sample_points(segment, count, rng)
}

/// Build the sampled memorization heatmap for a transcript.
///
/// For each segment `i` (row), samples `ceil(alpha * k)` of its points and
/// evaluates their memorization at checkpoints `i-beta ..= i+beta`, clamped
/// to `0 ..= m`. Deterministic given the transcript and `report_seed`.
pub fn heatmap(t: &Transcript, alpha: f64, beta: usize, report_seed: u64) -> Result<MemorizationMatrix> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(PotdError::Config(format!("sampling fraction {alpha} outside (0, 1]")));
    }
    let order = t.order()?;
    let m = order.segment_count();
    let cols = t.checkpoints.len();
    let mut rng = Stream::new(report_key(t, report_seed, b"heatmap"));
    let val_count = ((alpha * order.holdout.len() as f64).ceil() as usize).max(5);
    let val = ValSummary::build(t, &order, val_count, &mut rng)?;

    let mut mean_m = vec![vec![f64::NAN; cols]; m];
    let mut mean_dm = vec![vec![f64::NAN; cols]; m];
    let mut sample_ids = Vec::with_capacity(m);
    let mut point_m = vec![vec![Vec::new(); cols]; m];
    let mut small = false;

    for i in 1..=m {
        let ids = sample_segment(order.segment(i), alpha, &mut rng);
        if ids.len() < 5 {
            small = true;
        }
        let lo = i.saturating_sub(beta);
        let hi = (i + beta).min(cols - 1);
        let mut prev_losses: Option<Vec<f64>> = None;
        for j in lo..=hi {
            let losses = point_losses(t, &t.checkpoints[j].weights, &ids)?;
            let ms: Vec<f64> = losses.iter().map(|&l| memorization(l, val.means[j])).collect();
            mean_m[i - 1][j] = ms.iter().sum::<f64>() / ms.len() as f64;
            if let Some(prev) = &prev_losses {
                let dms: Vec<f64> = losses
                    .iter()
                    .zip(prev)
                    .map(|(&lj, &lp)| memorization_delta(lj, lp, val.means[j], val.means[j - 1]))
                    .collect();
                mean_dm[i - 1][j] = dms.iter().sum::<f64>() / dms.len() as f64;
            }
            point_m[i - 1][j] = ms;
            prev_losses = Some(losses);
        }
        sample_ids.push(ids);
    }

    Ok(MemorizationMatrix {
        alpha,
        beta,
        segments: m,
        mean_m,
        mean_dm,
        sample_ids,
        point_m,
        small_sample_warning: small,
    })
}

/// Fraction Below Quantile: how many of `points_dm` fall at or below the
/// `p`-quantile of `val_dm`. Ties count as below.
pub fn fbq(points_dm: &[f64], val_dm: &[f64], p: f64) -> Result<f64> {
    if points_dm.is_empty() || val_dm.is_empty() {
        return Err(PotdError::Contract("FBQ needs nonempty samples".into()));
    }
    let q = quantile(val_dm, p)?;
    let below = points_dm.iter().filter(|&&d| d <= q).count();
    Ok(below as f64 / points_dm.len() as f64)
}

/// Subtraction upper bound λ = FBQ(train) / FBQ(val).
///
/// Returns `None` when `fbq_val` is zero (not computable; widen `p`).
pub fn subtraction_bound(fbq_train: f64, fbq_val: f64) -> Option<f64> {
    if fbq_val > 0.0 {
        Some(fbq_train / fbq_val)
    } else {
        None
    }
}

/// Per-segment FBQ on training and validation points plus λ.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantileReport {
    pub p: f64,
    /// Rows align with segments 1..=m.
    pub fbq_train: Vec<f64>,
    pub fbq_val: Vec<f64>,
    /// `None` where FBQ(val) was zero.
    pub lambda: Vec<Option<f64>>,
}

/// Compute the quantile report for every segment of a transcript.
///
/// For segment `i`, training deltas are the sampled `Π_i` memorization
/// deltas across `W_{i-1} -> W_i`; the validation deltas come from the
/// shared validation sample across the same transition.
pub fn quantile_report(
    t: &Transcript,
    p: f64,
    alpha: f64,
    report_seed: u64,
) -> Result<QuantileReport> {
    if !(p > 0.0 && p < 1.0) {
        return Err(PotdError::Config(format!("percentile {p} outside (0, 1)")));
    }
    let order = t.order()?;
    let m = order.segment_count();
    let mut rng = Stream::new(report_key(t, report_seed, b"quantile"));
    let val_count = ((alpha * order.holdout.len() as f64).ceil() as usize).max(10);
    let val = ValSummary::build(t, &order, val_count, &mut rng)?;

    let mut fbq_train = Vec::with_capacity(m);
    let mut fbq_val = Vec::with_capacity(m);
    let mut lambda = Vec::with_capacity(m);
    for i in 1..=m {
        let ids = sample_segment(order.segment(i), alpha, &mut rng);
        let dms = segment_deltas(t, &ids, i, i - 1, &val)?;
        let val_dms = val.deltas(i, i - 1);
        let ft = fbq(&dms, &val_dms, p)?;
        let fv = fbq(&val_dms, &val_dms, p)?;
        lambda.push(subtraction_bound(ft, fv));
        fbq_train.push(ft);
        fbq_val.push(fv);
    }
    Ok(QuantileReport { p, fbq_train, fbq_val, lambda })
}

/// Memorization deltas of the given point ids across checkpoints
/// `prev -> i`, using the shared validation means.
pub fn segment_deltas(
    t: &Transcript,
    ids: &[u32],
    i: usize,
    prev: usize,
    val: &ValSummary,
) -> Result<Vec<f64>> {
    let at_i = point_losses(t, &t.checkpoints[i].weights, ids)?;
    let at_prev = point_losses(t, &t.checkpoints[prev].weights, ids)?;
    Ok(at_i
        .iter()
        .zip(&at_prev)
        .map(|(&li, &lp)| memorization_delta(li, lp, val.means[i], val.means[prev]))
        .collect())
}

/// Long-range memorization profile at checkpoint `i`: mean memorization of
/// the preceding segments' samples, plus the per-point values needed for a
/// rank test against validation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LongRangeReport {
    pub checkpoint: usize,
    /// `offsets[j] = j + 1`: entry `j` describes segment `i - offsets[j]`.
    pub offsets: Vec<usize>,
    pub mean_m: Vec<f64>,
    pub point_m: Vec<Vec<f64>>,
    /// Per-point validation memorization at `W_i` (mean is 0 by definition).
    pub val_m: Vec<f64>,
}

/// Evaluate memorization of segments `i-1, i-2, …, i-depth` at checkpoint
/// `W_i`. Honest training shows a gradual forgetting decay; a checkpoint
/// glued from an unrelated run collapses to validation level immediately.
pub fn long_range_memorization(
    t: &Transcript,
    i: usize,
    depth: usize,
    alpha: f64,
    report_seed: u64,
) -> Result<LongRangeReport> {
    let order = t.order()?;
    if i >= t.checkpoints.len() {
        return Err(PotdError::Config(format!("checkpoint {i} out of range")));
    }
    if depth >= i {
        return Err(PotdError::Config(format!("depth {depth} must be < checkpoint index {i}")));
    }
    let mut rng = Stream::new(report_key(t, report_seed, b"long-range"));
    let val_count = ((alpha * order.holdout.len() as f64).ceil() as usize).max(10);
    let picks = rng.sample_without_replacement(order.holdout.len(), val_count.min(order.holdout.len()));
    let val_ids: Vec<u32> = picks.iter().map(|&j| order.holdout[j]).collect();
    let val_losses = point_losses(t, &t.checkpoints[i].weights, &val_ids)?;
    let val_mean = val_losses.iter().sum::<f64>() / val_losses.len() as f64;
    let val_m: Vec<f64> = val_losses.iter().map(|&l| memorization(l, val_mean)).collect();

    let mut offsets = Vec::with_capacity(depth);
    let mut mean_m = Vec::with_capacity(depth);
    let mut point_m = Vec::with_capacity(depth);
    for off in 1..=depth {
        let seg = order.segment(i - off);
        let ids = sample_segment(seg, alpha, &mut rng);
        let losses = point_losses(t, &t.checkpoints[i].weights, &ids)?;
        let ms: Vec<f64> = losses.iter().map(|&l| memorization(l, val_mean)).collect();
        mean_m.push(ms.iter().sum::<f64>() / ms.len() as f64);
        point_m.push(ms);
        offsets.push(off);
    }
    Ok(LongRangeReport { checkpoint: i, offsets, mean_m, point_m, val_m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_dataset, DataGenConfig};
    use crate::prover::train_run;
    use crate::transcript::HyperParams;

    fn small_run() -> Transcript {
        let cfg = DataGenConfig { n: 330, seq_len: 24, vocab: 32, ..DataGenConfig::default() };
        let data = gen_dataset([11u8; 32], &cfg).unwrap();
        let hyper = HyperParams {
            arch: crate::tinylm::ArchConfig {
                vocab: 32,
                seq_len: 24,
                embed_dim: 12,
                hidden_dim: 48,
                ..Default::default()
            },
            batch_size: 15,
            segment_len: 50,
            checkpoint_count: 6,
            n_v: 30,
            ..Default::default()
        };
        train_run(&data, &hyper).unwrap()
    }

    #[test]
    fn memorization_is_val_mean_minus_loss() {
        assert_eq!(memorization(3.0, 3.0), 0.0);
        assert_eq!(memorization(2.0, 3.0), 1.0);
    }

    #[test]
    fn delta_telescopes() {
        let d01 = memorization_delta(2.0, 3.0, 4.0, 4.5);
        let d12 = memorization_delta(1.5, 2.0, 3.8, 4.0);
        let d02 = memorization_delta(1.5, 3.0, 3.8, 4.5);
        assert!((d01 + d12 - d02).abs() < 1e-12);
    }

    #[test]
    fn fbq_trivial_cases() {
        let val: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let above: Vec<f64> = vec![1000.0; 20];
        let below: Vec<f64> = vec![-5.0; 20];
        assert_eq!(fbq(&above, &val, 0.1).unwrap(), 0.0);
        assert_eq!(fbq(&below, &val, 0.1).unwrap(), 1.0);
        // Same sample → ≈ p.
        let self_rate = fbq(&val, &val, 0.1).unwrap();
        assert!((self_rate - 0.1).abs() <= 1.0 / (val.len() as f64).sqrt());
    }

    #[test]
    fn fbq_monotone_in_p() {
        let mut rng = Stream::new([2u8; 32]);
        let pts: Vec<f64> = (0..60).map(|_| rng.gaussian()).collect();
        let val: Vec<f64> = (0..80).map(|_| rng.gaussian()).collect();
        let mut last = 0.0;
        for p in [0.05, 0.1, 0.2, 0.3, 0.5, 0.8] {
            let f = fbq(&pts, &val, p).unwrap();
            assert!(f >= last, "FBQ not monotone at p={p}");
            last = f;
        }
    }

    #[test]
    fn lambda_basics() {
        assert_eq!(subtraction_bound(0.3, 0.3), Some(1.0));
        assert_eq!(subtraction_bound(0.0, 0.2), Some(0.0));
        assert_eq!(subtraction_bound(0.5, 0.0), None);
    }

    #[test]
    fn lambda_invariant_under_loss_shift() {
        // Adding a constant to every loss shifts means and per-point losses
        // alike, so deltas, FBQ, and λ are unchanged.
        let mut rng = Stream::new([4u8; 32]);
        let tr_i: Vec<f64> = (0..40).map(|_| rng.gaussian()).collect();
        let tr_p: Vec<f64> = (0..40).map(|_| rng.gaussian()).collect();
        let va_i: Vec<f64> = (0..40).map(|_| rng.gaussian()).collect();
        let va_p: Vec<f64> = (0..40).map(|_| rng.gaussian()).collect();
        let means = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let deltas = |pi: &[f64], pp: &[f64], mi: f64, mp: f64| -> Vec<f64> {
            pi.iter().zip(pp).map(|(&a, &b)| memorization_delta(a, b, mi, mp)).collect()
        };
        let base_t = deltas(&tr_i, &tr_p, means(&va_i), means(&va_p));
        let base_v = deltas(&va_i, &va_p, means(&va_i), means(&va_p));
        let l0 = subtraction_bound(
            fbq(&base_t, &base_v, 0.2).unwrap(),
            fbq(&base_v, &base_v, 0.2).unwrap(),
        );
        let shift = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| x + 7.0).collect() };
        let (si, sp, svi, svp) = (shift(&tr_i), shift(&tr_p), shift(&va_i), shift(&va_p));
        let s_t = deltas(&si, &sp, means(&svi), means(&svp));
        let s_v = deltas(&svi, &svp, means(&svi), means(&svp));
        let l1 = subtraction_bound(fbq(&s_t, &s_v, 0.2).unwrap(), fbq(&s_v, &s_v, 0.2).unwrap());
        assert_eq!(l0, l1);
    }

    #[test]
    fn heatmap_is_deterministic_and_windowed() {
        let t = small_run();
        let a = heatmap(&t, 0.2, 1, 42).unwrap();
        let b = heatmap(&t, 0.2, 1, 42).unwrap();
        // NaN-tolerant grid equality: compare bit patterns.
        let bits = |g: &Vec<Vec<f64>>| -> Vec<Vec<u64>> {
            g.iter().map(|row| row.iter().map(|v| v.to_bits()).collect()).collect()
        };
        assert_eq!(bits(&a.mean_m), bits(&b.mean_m));
        assert_eq!(a.sample_ids, b.sample_ids);
        let c = heatmap(&t, 0.2, 1, 43).unwrap();
        assert_ne!(a.sample_ids, c.sample_ids, "different report seeds, same sample");
        // β = 1 window: row 3 (segment 3) sees checkpoints 2..=4 only.
        let row = &a.mean_m[2];
        for (j, v) in row.iter().enumerate() {
            assert_eq!(v.is_finite(), (2..=4).contains(&j), "col {j}");
        }
    }

    #[test]
    fn heatmap_beta_zero_is_diagonal_only() {
        let t = small_run();
        let m = heatmap(&t, 0.2, 0, 1).unwrap();
        for (row, vals) in m.mean_m.iter().enumerate() {
            for (j, v) in vals.iter().enumerate() {
                assert_eq!(v.is_finite(), j == row + 1);
            }
        }
    }

    #[test]
    fn heatmap_small_sample_warning() {
        let t = small_run();
        // ceil(0.02 * 50) = 1 < 5 → warning.
        let m = heatmap(&t, 0.02, 0, 1).unwrap();
        assert!(m.small_sample_warning);
        let m2 = heatmap(&t, 0.5, 0, 1).unwrap();
        assert!(!m2.small_sample_warning);
    }

    #[test]
    fn heatmap_cells_recompute_from_point_samples() {
        let t = small_run();
        let m = heatmap(&t, 0.3, 2, 7).unwrap();
        let order = t.order().unwrap();
        for (row, ids) in m.sample_ids.iter().enumerate() {
            let seg: std::collections::HashSet<u32> =
                order.segment(row + 1).iter().copied().collect();
            assert!(ids.iter().all(|id| seg.contains(id)), "row {row} sampled outside segment");
            for (col, pts) in m.point_m[row].iter().enumerate() {
                if pts.is_empty() {
                    assert!(m.mean_m[row][col].is_nan());
                } else {
                    let mean = pts.iter().sum::<f64>() / pts.len() as f64;
                    assert!((mean - m.mean_m[row][col]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn honest_run_memorizes_its_own_segment() {
        // Mean memorization of Π_i at W_i exceeds its value at W_{i-1}, and
        // the segment's deltas sit above the validation deltas' median.
        let t = small_run();
        let m = heatmap(&t, 1.0, 1, 3).unwrap();
        let mut gains = 0;
        for i in 1..=m.segments {
            if m.mean_m[i - 1][i] > m.mean_m[i - 1][i - 1] {
                gains += 1;
            }
        }
        assert!(gains >= m.segments - 1, "only {gains}/{} segments gained", m.segments);
    }

    #[test]
    fn long_range_shapes_and_bounds() {
        let t = small_run();
        let r = long_range_memorization(&t, 4, 3, 0.5, 9).unwrap();
        assert_eq!(r.offsets, vec![1, 2, 3]);
        assert_eq!(r.mean_m.len(), 3);
        assert!(long_range_memorization(&t, 4, 4, 0.5, 9).is_err());
        let empty = long_range_memorization(&t, 4, 0, 0.5, 9).unwrap();
        assert!(empty.mean_m.is_empty());
    }

    #[test]
    fn quantile_report_bounds() {
        let t = small_run();
        let r = quantile_report(&t, 0.1, 0.5, 5).unwrap();
        assert_eq!(r.fbq_train.len(), 6);
        for i in 0..6 {
            assert!((0.0..=1.0).contains(&r.fbq_train[i]));
            assert!((0.0..=1.0).contains(&r.fbq_val[i]));
            if let Some(l) = r.lambda[i] {
                assert!(l >= 0.0);
            }
        }
    }
}
