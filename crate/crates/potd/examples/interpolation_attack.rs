//! Interpolation attack: forge the checkpoints after a splice as convex
//! combinations of the last real checkpoint and a stolen final weight
//! vector, calibrating the mixing coefficients so the validation-loss curve
//! stays smooth. The loss screen is fooled; the memorization heatmap is
//! not, because interpolated checkpoints memorize no segment in particular.
//!
//! Run with: cargo run --example interpolation_attack

mod common;

use potd::attacks::interpolate;
use potd::memorization::{heatmap, report_key, ValSummary};
use potd::rng::Stream;
use potd::stats::loss_smoothness;

fn main() {
    let ta = common::example_run(6);
    let tb = common::example_run(7);
    let splice = 2;
    let (spoofed, record) =
        interpolate(&ta, splice, tb.final_weights(), true, 11).expect("interpolate");
    println!("spliced at checkpoint {splice}; coefficients {}", record.params["coefficients"]);

    let order = spoofed.order().expect("order");
    let mut rng = Stream::new(report_key(&spoofed, 2, b"example-interp"));
    let val = ValSummary::build(&spoofed, &order, 60, &mut rng).expect("val");
    let scores = loss_smoothness(&val.means).expect("smoothness");
    println!("\ncheckpoint, mean val loss, discontinuity score:");
    for (i, (l, s)) in val.means.iter().zip(&scores).enumerate() {
        println!("  {i}: {l:.4}  {s:.2}");
    }
    println!("  (calibration keeps every score low - the loss screen passes)");

    let grid = heatmap(&spoofed, 1.0, spoofed.checkpoints.len(), 3).expect("heatmap");
    let argmax = grid.row_argmax();
    println!("\nsegment -> most-memorized checkpoint (own checkpoint in parentheses):");
    for (r, a) in argmax.iter().enumerate() {
        let own = r + 1;
        let note = if *a == own { "" } else { "  <- diagonal broken" };
        println!("  segment {own} -> checkpoint {a} ({own}){note}");
    }
}
