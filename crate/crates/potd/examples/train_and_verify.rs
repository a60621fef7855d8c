//! End-to-end honest pipeline: commit to data and seed, train with
//! checkpointing, save the transcript to disk, reload it, and run the full
//! verification protocol.
//!
//! Run with: cargo run --example train_and_verify

mod common;

use potd::transcript::{load_transcript, save_transcript};
use potd::verifier::{verify, Verdict, VerifierConfig};

fn main() {
    let t = common::example_run(1);
    println!("trained {} checkpoints, digest {}", t.checkpoints.len(), hex::encode(t.digest()));

    let dir = std::env::temp_dir().join("potd-example-honest");
    save_transcript(&t, &dir).expect("save");
    let reloaded = load_transcript(&dir).expect("load");
    assert_eq!(reloaded.digest(), t.digest());
    println!("round-tripped through {}", dir.display());

    // The example run is small, so give the screens a bit more slack than
    // the desk-scale defaults; see the verifier docs for the threshold
    // rationale.
    let cfg = VerifierConfig {
        order_significance: 0.9,
        lambda_threshold: 3.0,
        delta_outlier_threshold: 8.0,
        trend_break_threshold: 20.0,
        smoothness_threshold: 8.0,
        ..VerifierConfig::default()
    };
    let report = verify(&reloaded, &cfg, 42).expect("verify");
    for s in &report.screens {
        println!(
            "segment {}: order p = {:.2e}, lambda = {:?}, delta z = {:+.2}",
            s.segment, s.order.p_value, s.lambda, s.delta_score
        );
    }
    for r in &report.retrained {
        println!("retrained segment {}: normalized error {:.2e}", r.segment, r.error);
    }
    match report.verdict {
        Verdict::Accept => println!("verdict: accept"),
        ref other => println!("verdict: {other:?}"),
    }
}
