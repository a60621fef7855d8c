//! Data-subtraction sweep: one segment claims its full point list but
//! trains on only a (1−κ) subset. The untrained points' memorization
//! deltas fall to validation level, so the fraction of claimed points
//! below the validation delta quantile — and with it the bound
//! λ = FBQ(train)/FBQ(val) — grows with κ.
//!
//! Run with: cargo run --example subtraction_sweep

mod common;

use potd::attacks::subtract_data;
use potd::memorization::quantile_report;

fn main() {
    let (_, mut hyper) = common::example_config();
    hyper.s_rand = 9;
    let data = common::example_dataset(9);
    let attacked_segment = 3;

    println!("{:>8} {:>12} {:>10} {:>8}", "kappa", "fbq(train)", "fbq(val)", "lambda");
    for kappa in [0.0, 0.05, 0.5, 0.95] {
        let (t, _) =
            subtract_data(&data, &hyper, attacked_segment, kappa, [12u8; 32]).expect("attack");
        let q = quantile_report(&t, 0.1, 1.0, 4).expect("quantile report");
        let idx = attacked_segment - 1;
        println!(
            "{kappa:>8} {:>12.3} {:>10.3} {:>8}",
            q.fbq_train[idx],
            q.fbq_val[idx],
            q.lambda[idx].map(|l| format!("{l:.2}")).unwrap_or_else(|| "n/a".into()),
        );
    }
    println!("\nlambda tracks the subtracted fraction: an upper-bound estimate of kappa");
}
