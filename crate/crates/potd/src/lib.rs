//! Desk-scale proof-of-training-data toolkit.
//!
//! A Prover trains a small deterministic language model under a dataset-
//! committed seed and data order, saving a checkpoint after every segment,
//! and publishes the resulting training transcript. A Verifier re-derives
//! the commitment, screens every segment with memorization and order
//! statistics, and retrains the suspicious ones. Attack generators produce
//! spoofed transcripts the verifier is expected to catch.

pub mod error;
pub mod rng;
pub mod attacks;
pub mod cli;
pub mod commitment;
pub mod datagen;
pub mod memorization;
pub mod prover;
pub mod stats;
pub mod tinylm;
pub mod transcript;
pub mod verifier;

pub use error::{PotdError, Result};
