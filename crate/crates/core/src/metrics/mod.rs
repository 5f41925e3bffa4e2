//! Automatic evaluation: sentence BLEU-1/2, ROUGE-L F1 and perplexity,
//! reported over all examples and per instruction strength.

mod report;

pub use report::{evaluate, evaluate_with, merge_reports, EvalReport, Scores, SplitScores, REPORT_HEADER};

use std::collections::HashMap;
use std::hash::Hash;

use crate::curriculum::{token_mean_loss, Pair};
use crate::model::{ModelConfig, ModelParams};
use crate::{Error, Result};

fn ngram_counts<T: Eq + Hash>(xs: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if xs.len() >= n {
        for w in xs.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram precision: matched / total candidate n-grams, 0 when the
/// candidate has no n-grams of that order.
pub fn clipped_precision<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> f64 {
    let cand = ngram_counts(candidate, n);
    let total: usize = cand.values().sum();
    if total == 0 {
        return 0.0;
    }
    let refs = ngram_counts(reference, n);
    let matched: usize = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    matched as f64 / total as f64
}

/// `exp(1 - r/c)` for a candidate shorter than the reference, else 1.
pub fn brevity_penalty(candidate_len: usize, reference_len: usize) -> f64 {
    if candidate_len == 0 {
        0.0
    } else if candidate_len < reference_len {
        (1.0 - reference_len as f64 / candidate_len as f64).exp()
    } else {
        1.0
    }
}

/// Sentence BLEU with uniform weights over orders 1..=n and no smoothing:
/// any order with zero matches gives 0.
pub fn bleu_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::invalid("bleu: empty reference"));
    }
    if n == 0 {
        return Err(Error::invalid("bleu: order must be at least 1"));
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let p = clipped_precision(candidate, reference, k);
        if p == 0.0 {
            return Ok(0.0);
        }
        log_sum += p.ln();
    }
    Ok(brevity_penalty(candidate.len(), reference.len()) * (log_sum / n as f64).exp())
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = prev.clone();
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 with equal precision and recall weight.
pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> Result<f64> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::invalid("rouge_l: empty sequence"));
    }
    let l = lcs_len(candidate, reference) as f64;
    if l == 0.0 {
        return Ok(0.0);
    }
    let p = l / candidate.len() as f64;
    let r = l / reference.len() as f64;
    Ok(2.0 * p * r / (p + r))
}

/// `exp(-mean(log_probs))`.
pub fn perplexity_from_log_probs(log_probs: &[f64]) -> Result<f64> {
    if log_probs.is_empty() {
        return Err(Error::invalid("perplexity of zero tokens"));
    }
    let nll = -log_probs.iter().sum::<f64>() / log_probs.len() as f64;
    Ok(nll.exp())
}

/// `exp` of the mean per-token NLL of each story given its instruction.
pub fn perplexity(params: &ModelParams, cfg: &ModelConfig, pairs: &[Pair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("perplexity over an empty example set"));
    }
    Ok(f64::from(token_mean_loss(params, cfg, pairs)?).exp())
}
