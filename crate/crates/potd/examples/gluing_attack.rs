//! Gluing attack and its detection: splice the tail of a second training
//! run onto the prefix of the first while claiming the first run's data
//! throughout. The splice passes every structural check but shows up three
//! ways: a weight-space delta outlier at the cut, validation-level
//! memorization of pre-cut segments at post-cut checkpoints, and an
//! unreproducible spliced segment.
//!
//! Run with: cargo run --example gluing_attack

mod common;

use potd::attacks::glue;
use potd::memorization::long_range_memorization;
use potd::stats::delta_outliers;
use potd::tinylm::weight_distance;
use potd::transcript::verify_structure;
use potd::verifier::{verify, Verdict, VerifierConfig};

fn main() {
    let ta = common::example_run(4);
    let tb = common::example_run(5); // different data, same shapes
    let cut = 3;
    let (glued, record) = glue(&ta, &tb, cut).expect("glue");
    println!("glued at checkpoint {cut}; ground truth marks segments {:?}", record.affected_segments);
    println!("structure check passes: {}", verify_structure(&glued).pass);

    let deltas: Vec<f64> = (1..=glued.hyper.checkpoint_count)
        .map(|i| {
            weight_distance(&glued.checkpoints[i].weights, &glued.checkpoints[i - 1].weights)
                .expect("distance")
        })
        .collect();
    let scores = delta_outliers(&deltas).expect("scores");
    for (i, (d, z)) in deltas.iter().zip(&scores).enumerate() {
        println!("segment {}: |dW| = {d:.3}, robust z = {z:+.2}", i + 1);
    }

    let lr = long_range_memorization(&glued, cut + 1, cut, 1.0, 9).expect("long range");
    println!("\nmean memorization of earlier segments at post-cut checkpoint {}:", cut + 1);
    for (off, m) in lr.offsets.iter().zip(&lr.mean_m) {
        println!("  segment {}: {m:+.4}", cut + 1 - off);
    }
    println!("  (honest runs decay gradually; a glue collapses to ~0, the validation level)");

    let report = verify(&glued, &VerifierConfig::default(), 1).expect("verify");
    match report.verdict {
        Verdict::Reject { ref reasons } => {
            println!("\nverdict: reject");
            for r in reasons {
                println!("  - {r}");
            }
        }
        ref other => println!("\nverdict: {other:?}"),
    }
}
