//! Autoregressive decoding: the instruction is encoded once, then the
//! decoder is re-run on the growing prefix until EOS or the token budget.

use rand::Rng;

use crate::model::{decode_logits, encode, ModelConfig, ModelParams};
use crate::tokenizer::{TokenId, TokenSeq, Vocab, BOS, EOS};
use crate::{rng, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    /// Argmax; ties go to the lowest token id.
    Greedy,
    /// Draws from `softmax(logits / temperature)`.
    Sample,
}

impl std::str::FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(DecodeMode::Greedy),
            "sample" => Ok(DecodeMode::Sample),
            _ => Err(Error::invalid(format!("unknown decode mode {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenParams {
    pub max_new_tokens: usize,
    pub mode: DecodeMode,
    pub temperature: f32,
    pub seed: u64,
}

impl GenParams {
    pub fn greedy(max_new_tokens: usize) -> Self {
        GenParams {
            max_new_tokens,
            mode: DecodeMode::Greedy,
            temperature: 1.0,
            seed: 0,
        }
    }

    pub fn sample(max_new_tokens: usize, temperature: f32, seed: u64) -> Self {
        GenParams {
            max_new_tokens,
            mode: DecodeMode::Sample,
            temperature,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_new_tokens == 0 {
            return Err(Error::invalid("max_new_tokens must be at least 1"));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub text: String,
    /// Emitted tokens, including the terminating EOS when one was produced.
    pub ids: Vec<TokenId>,
    /// Natural log-probability of each emitted token under the model at
    /// temperature 1.
    pub log_probs: Vec<f32>,
}

/// `ln softmax(logits)[i]` for every i, in f64.
pub(crate) fn log_softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let lse = logits.iter().map(|&x| (x as f64 - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&x| x as f64 - lse).collect()
}

fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn draw(logits: &[f32], temperature: f32, rng: &mut impl Rng) -> usize {
    let scaled: Vec<f32> = logits.iter().map(|&x| x / temperature).collect();
    let probs: Vec<f64> = log_softmax(&scaled).into_iter().map(f64::exp).collect();
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Round-off left `u` above the final cumulative sum.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Generates from an already encoded instruction.
pub fn generate_ids(params: &ModelParams, cfg: &ModelConfig, instruction: &TokenSeq, gp: &GenParams) -> Result<Generation> {
    gp.validate()?;
    if instruction.len() > cfg.max_len {
        return Err(Error::invalid(format!(
            "instruction has {} tokens, more than max_len {}",
            instruction.len(),
            cfg.max_len
        )));
    }
    if instruction.len() + gp.max_new_tokens > cfg.max_len {
        return Err(Error::invalid(format!(
            "instruction length {} plus max_new_tokens {} exceeds max_len {}",
            instruction.len(),
            gp.max_new_tokens,
            cfg.max_len
        )));
    }
    let enc = encode(params, cfg, instruction)?;
    let mut rng = rng::stream(gp.seed, "sample");
    let mut prefix = vec![BOS];
    let mut log_probs = Vec::new();
    while log_probs.len() < gp.max_new_tokens {
        let logits = decode_logits(params, cfg, &enc, &TokenSeq::story(prefix.clone()))?;
        let last = logits.row(logits.rows() - 1);
        let next = match gp.mode {
            DecodeMode::Greedy => argmax(last),
            DecodeMode::Sample => draw(last, gp.temperature, &mut rng),
        };
        log_probs.push(log_softmax(last)[next] as f32);
        prefix.push(next as TokenId);
        if next as TokenId == EOS {
            break;
        }
    }
    let ids = prefix.split_off(1);
    Ok(Generation {
        text: String::new(),
        ids,
        log_probs,
    })
}

/// Generates a story for `instruction`. The decoded text omits EOS and any
/// other reserved token.
pub fn generate(
    params: &ModelParams,
    cfg: &ModelConfig,
    vocab: &Vocab,
    instruction: &str,
    gp: &GenParams,
) -> Result<Generation> {
    let mut out = generate_ids(params, cfg, &vocab.encode(instruction, true), gp)?;
    out.text = vocab.decode(&out.ids)?;
    Ok(out)
}
