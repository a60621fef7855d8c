//! The memorization heatmap: each segment's sampled points are most
//! memorized at their own checkpoint, producing a bright diagonal, and the
//! memorization fades over the following checkpoints as training forgets.
//!
//! Run with: cargo run --example memorization_heatmap

mod common;

use potd::memorization::heatmap;

fn main() {
    let t = common::example_run(2);
    let grid = heatmap(&t, 1.0, t.checkpoints.len(), 7).expect("heatmap");

    print!("{:>9}", "segment");
    for j in 0..t.checkpoints.len() {
        print!("{j:>8}");
    }
    println!();
    for (r, row) in grid.mean_m.iter().enumerate() {
        print!("{:>9}", r + 1);
        for v in row {
            if v.is_finite() {
                print!("{v:>8.3}");
            } else {
                print!("{:>8}", "-");
            }
        }
        println!();
    }
    let frac = grid.diagonal_fraction();
    println!("\nrow argmax on the diagonal for {:.0}% of segments", 100.0 * frac);
}
