//! Weak-to-strong curriculum instruction tuning for story generation.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense `f32` tensors and a tape that records operations for
//!   reverse-mode differentiation, plus a finite-difference gradient checker.
//! - [`tokenizer`]: word-level vocabulary and the string/id codec.
//! - [`model`]: the encoder-decoder Transformer, its parameters and the
//!   checkpoint file format.
//! - [`data`]: instruction/story records, JSONL I/O, a seeded synthetic corpus
//!   and padded batching.
//! - [`curriculum`]: the pretrain, weak-instruction and strong-instruction
//!   objectives, their weighted total, the optimizer and the phase runner.
//! - [`generate`]: autoregressive greedy and temperature decoding.
//! - [`metrics`]: BLEU-1/2, ROUGE-L, perplexity and the weak/strong report.

pub mod curriculum;
pub mod data;
mod error;
pub mod generate;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod tokenizer;

pub use error::{Error, Result};
