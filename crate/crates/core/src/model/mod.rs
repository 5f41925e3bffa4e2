//! Encoder-decoder Transformer.
//!
//! Pre-norm residual blocks, sinusoidal positions, ReLU feed-forward layers and
//! a token embedding shared by the encoder input, decoder input and output
//! projection (the latter scaled by 1/sqrt(d_model)).

pub mod checkpoint;
mod forward;
mod params;

pub use forward::{
    attention, attention_weights, decode_logits, decode_logits_in, encode, encode_in,
    sequence_loss, sequence_loss_in, AttentionMask, EncoderStates,
};
pub use params::{
    AttentionWeights, DecoderLayer, EncoderLayer, FeedForward, ModelParams, Norm, ParamVars,
    Weights,
};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    /// The default desk-scale configuration.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 2,
            n_layers_enc: 2,
            n_layers_dec: 2,
            d_ff: 128,
            max_len: 64,
            vocab_size,
        }
    }

    /// d_model 8, two heads, one layer per stack. Used for gradient checks.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers_enc: 1,
            n_layers_dec: 1,
            d_ff: 16,
            max_len: 16,
            vocab_size,
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers_enc", self.n_layers_enc),
            ("n_layers_dec", self.n_layers_dec),
            ("d_ff", self.d_ff),
            ("max_len", self.max_len),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("model config: {name} must be positive")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::invalid(format!(
                "model config: d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_len < 2 {
            return Err(Error::invalid("model config: max_len must be at least 2"));
        }
        if self.vocab_size < crate::tokenizer::RESERVED.len() {
            return Err(Error::invalid("model config: vocab_size smaller than the reserved tokens"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
