//! Covert data addition: one segment secretly trains on extra, undisclosed
//! points. Screening statistics barely notice a small off-distribution
//! injection — but the segment cannot be reproduced from the committed
//! data, which is exactly what selective retraining checks.
//!
//! Run with: cargo run --example data_addition_attack

mod common;

use potd::attacks::add_data;
use potd::datagen::{gen_dataset, DataGenConfig};
use potd::prover::retrain_segment;
use potd::verifier::reproduction_error;

fn main() {
    let (data_cfg, mut hyper) = common::example_config();
    hyper.s_rand = 8;
    let data = common::example_dataset(8);
    // Undisclosed extra data from a sharper (off-distribution) source.
    let extra_cfg = DataGenConfig { sharpness: 6.0, ..data_cfg };
    let extra = gen_dataset([99u8; 32], &extra_cfg).expect("extra data");

    let attacked_segment = 3;
    for fraction in [0.05, 0.5] {
        let (t, record) =
            add_data(&data, &hyper, attacked_segment, &extra, fraction, [5u8; 32]).expect("attack");
        println!(
            "fraction {fraction}: injected {} undisclosed points into segment {attacked_segment}",
            record.params["injected"]
        );
        for i in 1..=hyper.checkpoint_count {
            let retrained = retrain_segment(&t, i, None).expect("retrain");
            let err = reproduction_error(
                &t.checkpoints[i].weights,
                &retrained,
                &t.checkpoints[i - 1].weights,
            )
            .expect("error");
            let note = if err > 0.0 { "  <- not reproducible" } else { "" };
            println!("  segment {i}: normalized retrain error {err:.3e}{note}");
        }
    }
    println!("\n(honest segments reproduce exactly with the noise channel off)");
}
