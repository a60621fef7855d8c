//! Shared fixture for the runnable examples: a scaled-down configuration
//! (~20K parameters, 660 points, 6 segments) that trains in a few seconds
//! while still showing every effect the full desk configuration shows.

use potd::commitment::Dataset;
use potd::datagen::{gen_dataset, DataGenConfig};
use potd::prover::train_run;
use potd::tinylm::ArchConfig;
use potd::transcript::{HyperParams, Transcript};

pub fn example_config() -> (DataGenConfig, HyperParams) {
    let arch = ArchConfig {
        vocab: 48,
        seq_len: 32,
        embed_dim: 16,
        hidden_dim: 96,
        ..ArchConfig::default()
    };
    let data = DataGenConfig { n: 660, seq_len: arch.seq_len, vocab: arch.vocab, sharpness: 1.5 };
    let hyper = HyperParams {
        arch,
        batch_size: 16,
        segment_len: 100,
        checkpoint_count: 6,
        n_v: 60,
        ..HyperParams::default()
    };
    (data, hyper)
}

pub fn example_dataset(seed_byte: u8) -> Dataset {
    let (cfg, _) = example_config();
    gen_dataset([seed_byte; 32], &cfg).expect("datagen")
}

#[allow(dead_code)] // not every example needs a full training run
pub fn example_run(seed_byte: u8) -> Transcript {
    let (_, mut hyper) = example_config();
    hyper.s_rand = seed_byte as u32;
    train_run(&example_dataset(seed_byte), &hyper).expect("train")
}
