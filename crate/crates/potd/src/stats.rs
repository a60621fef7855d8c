//! Order-test and screening statistics used by the verifier.
//!
//! The centrepiece is a one-sided binomial test on memorization deltas: under
//! the null ("this segment was not the data trained between these two
//! checkpoints") each sampled point lands above the reference median with
//! probability 1/2, so the count of points above the median is Binomial(n, ½).
//! The remaining functions are robust screening scores for weight-space deltas
//! and validation-loss smoothness.
//!
//! Everything here is a pure function of its inputs.

use serde::{Deserialize, Serialize};

use crate::error::{PotdError, Result};

/// Outcome of the data-order binomial test for one segment/checkpoint pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderTestResult {
    /// Count of segment deltas strictly above the reference quantile.
    pub t: usize,
    /// Segment sample size.
    pub n_t: usize,
    /// One-sided p-value: P(T >= t) under T ~ Binomial(n_t, c).
    pub p_value: f64,
    /// Reference quantile of the training-distribution deltas (median by
    /// default).
    pub z: f64,
}

/// Survival function P(T >= t) for T ~ Binomial(n, c).
///
/// Computed by summing the pmf upward from `t` with the ratio recurrence
/// pmf(k+1) = pmf(k) * (n-k)/(k+1) * c/(1-c), starting from a log-space
/// evaluation of pmf(t) so that extreme tails stay accurate. Kahan summation
/// keeps the accumulated error near one ulp.
pub fn binom_sf(t: usize, n: usize, c: f64) -> Result<f64> {
    if t > n {
        return Err(PotdError::Contract(format!("binomial count {t} exceeds sample size {n}")));
    }
    if !(0.0..=1.0).contains(&c) {
        return Err(PotdError::Contract(format!("success probability {c} outside [0, 1]")));
    }
    if t == 0 {
        return Ok(1.0);
    }
    if c == 0.0 {
        return Ok(0.0);
    }
    if c == 1.0 {
        return Ok(1.0);
    }
    // log pmf(t) = log C(n, t) + t log c + (n - t) log(1 - c)
    let log_pmf = ln_choose(n, t) + t as f64 * c.ln() + (n - t) as f64 * (-c).ln_1p();
    let mut pmf = log_pmf.exp();
    let odds = c / (1.0 - c);
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for k in t..=n {
        let y = pmf - comp;
        let next = sum + y;
        comp = (next - sum) - y;
        sum = next;
        pmf *= (n - k) as f64 / (k + 1) as f64 * odds;
    }
    Ok(sum.min(1.0))
}

/// ln C(n, k) by compensated summation of the term logs; near machine
/// precision for the k ≤ 10⁴ range the order test needs.
fn ln_choose(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for j in 0..k {
        let term = ((n - j) as f64).ln() - ((j + 1) as f64).ln();
        let y = term - comp;
        let next = sum + y;
        comp = (next - sum) - y;
        sum = next;
    }
    sum
}

/// Lanczos approximation of ln Γ(x) for x > 0, accurate to ~1e-13.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, &coef) in COEF.iter().enumerate().skip(1) {
        a += coef / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Quantile of `values` by selection, with linear interpolation between order
/// statistics. `q` in [0, 1]; `q = 0.5` is the median.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(PotdError::Contract("quantile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(PotdError::Contract(format!("quantile level {q} outside [0, 1]")));
    }
    let n = values.len();
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let mut buf = values.to_vec();
    let (_, lo_val, rest) = buf.select_nth_unstable_by(lo, |a, b| a.total_cmp(b));
    let lo_val = *lo_val;
    if hi == lo {
        return Ok(lo_val);
    }
    // hi = lo + 1; the smallest element of the upper partition.
    let hi_val = rest.iter().copied().fold(f64::INFINITY, f64::min);
    let frac = pos - lo as f64;
    Ok(lo_val + frac * (hi_val - lo_val))
}

/// Data-order test: are the segment's memorization deltas systematically
/// larger than deltas of points drawn from the whole training distribution?
///
/// `z` is the `reference_q` quantile (median by default) of `train_dm`;
/// `t` counts segment deltas strictly above `z` — ties count as not-above,
/// which is conservative toward the null. Low p-value means the segment
/// really was the data trained at this checkpoint.
pub fn order_test(segment_dm: &[f64], train_dm: &[f64], reference_q: f64) -> Result<OrderTestResult> {
    if segment_dm.len() < 10 || train_dm.len() < 10 {
        return Err(PotdError::Contract(format!(
            "order test needs >= 10 points per sample, got {} and {}",
            segment_dm.len(),
            train_dm.len()
        )));
    }
    let z = quantile(train_dm, reference_q)?;
    let t = segment_dm.iter().filter(|&&d| d > z).count();
    let n_t = segment_dm.len();
    // Under the null each point is above the reference quantile with
    // probability 1 - reference_q (1/2 for the median).
    let p_value = binom_sf(t, n_t, 1.0 - reference_q)?;
    Ok(OrderTestResult { t, n_t, p_value, z })
}

/// Robust z-scores for per-segment weight deltas ‖Wᵢ − W_{i−1}‖.
///
/// Score = (delta − median) / (1.4826 · MAD). A constant series scores all
/// zeros. A glue or heavy data edit shows up as one large positive score.
pub fn delta_outliers(deltas: &[f64]) -> Result<Vec<f64>> {
    if deltas.len() < 4 {
        return Err(PotdError::Contract(format!(
            "outlier scoring needs >= 4 segments, got {}",
            deltas.len()
        )));
    }
    let med = quantile(deltas, 0.5)?;
    let abs_dev: Vec<f64> = deltas.iter().map(|d| (d - med).abs()).collect();
    let mad = quantile(&abs_dev, 0.5)?;
    let scale = 1.4826 * mad;
    Ok(deltas
        .iter()
        .map(|d| if scale > 0.0 { (d - med) / scale } else { 0.0 })
        .collect())
}

/// Discontinuity scores for a per-checkpoint validation-loss series.
///
/// Score at checkpoint i (1 ≤ i ≤ len−2) is |second difference| divided by a
/// local scale (median absolute first difference across the series, floored
/// to avoid division by ~0). Endpoints score 0. A smooth decay scores near
/// zero everywhere; a step lights up at the step.
pub fn loss_smoothness(series: &[f64]) -> Result<Vec<f64>> {
    if series.len() < 3 {
        return Err(PotdError::Contract(format!(
            "smoothness check needs >= 3 checkpoints, got {}",
            series.len()
        )));
    }
    let first_diffs: Vec<f64> = series.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let scale = quantile(&first_diffs, 0.5)?.max(1e-12);
    let mut scores = vec![0.0; series.len()];
    for i in 1..series.len() - 1 {
        let second = series[i + 1] - 2.0 * series[i] + series[i - 1];
        scores[i] = second.abs() / scale;
    }
    Ok(scores)
}

/// Two-sided Mann-Whitney rank test (normal approximation with tie
/// correction). Used for "is this sample distinguishable from validation?"
/// checks in the long-range memorization screen.
pub fn rank_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 5 || b.len() < 5 {
        return Err(PotdError::Contract(format!(
            "rank test needs >= 5 points per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n1 = a.len() as f64;
    let n2 = b.len() as f64;
    let mut all: Vec<(f64, bool)> =
        a.iter().map(|&v| (v, true)).chain(b.iter().map(|&v| (v, false))).collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    // Mid-ranks with tie groups.
    let mut rank_sum_a = 0.0f64;
    let mut tie_term = 0.0f64;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let ties = (j - i) as f64;
        let mid_rank = (i + j + 1) as f64 / 2.0; // average of ranks i+1..=j
        for item in &all[i..j] {
            if item.1 {
                rank_sum_a += mid_rank;
            }
        }
        tie_term += ties * ties * ties - ties;
        i = j;
    }
    let u = rank_sum_a - n1 * (n1 + 1.0) / 2.0;
    let mean = n1 * n2 / 2.0;
    let n = n1 + n2;
    let var = n1 * n2 / 12.0 * (n + 1.0 - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        // All values identical: the samples are indistinguishable.
        return Ok(1.0);
    }
    // Continuity-corrected two-sided normal approximation.
    let zscore = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
    Ok((2.0 * normal_sf(zscore)).min(1.0))
}

/// Standard normal survival function via the complementary error function.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Complementary error function, Abramowitz & Stegun 7.1.26-style rational
/// approximation refined to ~1e-12 by a continued-fraction tail for large x.
fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    // W. J. Cody-style rational approximation via the scaled complement.
    let z = x * x;
    let t = 1.0 / (1.0 + 0.5 * x);
    // Numerical Recipes erfc approximation, |error| < 1.2e-7 relative, which
    // is plenty for p-value screening; exact tails come from binom_sf.
    let ans = t
        * (-z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587
                                        + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    ans
}

/// Fisher's method: combine independent p-values into one chi-square tail
/// probability. Zero p-values are floored at 1e-300 to keep the statistic
/// finite.
pub fn fisher_combined(p_values: &[f64]) -> Result<f64> {
    if p_values.is_empty() {
        return Err(PotdError::Contract("no p-values to combine".into()));
    }
    let stat: f64 = p_values.iter().map(|p| -2.0 * p.max(1e-300).ln()).sum();
    let dof = 2 * p_values.len();
    Ok(chi_square_sf(stat, dof))
}

/// Chi-square survival function: P(X >= x) with `dof` degrees of freedom,
/// i.e. the regularized upper incomplete gamma Q(dof/2, x/2).
pub fn chi_square_sf(x: f64, dof: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_q(dof as f64 / 2.0, x / 2.0)
}

/// Regularized upper incomplete gamma Q(a, x): series for x < a + 1,
/// continued fraction otherwise.
fn gamma_q(a: f64, x: f64) -> f64 {
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_cf(a, x)
    }
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..500 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-16 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_q_cf(a: f64, x: f64) -> f64 {
    // Lentz's algorithm for the continued fraction.
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}
