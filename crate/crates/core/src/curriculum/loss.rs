use crate::data::{InstructionExample, Strength};
use crate::model::{sequence_loss_in, ModelConfig, ModelParams, ParamVars};
use crate::numerics::{Graph, Var};
use crate::tokenizer::{TokenSeq, Vocab, BOS};
use crate::{Error, Result};

use super::LossWeights;

/// An encoded (instruction, story) training pair.
pub type Pair = (TokenSeq, TokenSeq);

pub fn encode_examples(examples: &[InstructionExample], vocab: &Vocab) -> Vec<Pair> {
    examples
        .iter()
        .map(|e| (vocab.encode(&e.instruction, true), vocab.encode_story(&e.story)))
        .collect()
}

/// Pairs each story with the one-token encoder context `[BOS]`.
pub fn pretrain_pairs(stories: &[TokenSeq]) -> Vec<Pair> {
    stories
        .iter()
        .map(|s| (TokenSeq::instruction(vec![BOS]), s.clone()))
        .collect()
}

/// Mean NLL over every story token in `pairs`. Each example's mean is
/// weighted by its token count, so long and short stories count per token.
pub fn token_mean_loss_in(g: &mut Graph, w: &ParamVars, cfg: &ModelConfig, pairs: &[Pair]) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::invalid("loss over an empty batch"));
    }
    let total: usize = pairs.iter().map(|(_, s)| s.len()).sum();
    let mut acc: Option<Var> = None;
    for (ins, story) in pairs {
        let l = sequence_loss_in(g, w, cfg, &ins.ids, &story.ids)?;
        let l = g.scale(l, story.len() as f32 / total as f32)?;
        acc = Some(match acc {
            Some(a) => g.add(a, l)?,
            None => l,
        });
    }
    Ok(acc.expect("nonempty"))
}

pub fn token_mean_loss(params: &ModelParams, cfg: &ModelConfig, pairs: &[Pair]) -> Result<f32> {
    let mut g = Graph::new();
    let w = params.bind(&mut g);
    let l = token_mean_loss_in(&mut g, &w, cfg, pairs)?;
    g.scalar(l)
}

/// Unconditional next-token NLL over stories.
pub fn pretrain_loss(params: &ModelParams, cfg: &ModelConfig, stories: &[TokenSeq]) -> Result<f32> {
    token_mean_loss(params, cfg, &pretrain_pairs(stories))
}

/// Story NLL conditioned on each example's instruction. Every example must
/// have the requested strength.
pub fn instruction_loss(
    params: &ModelParams,
    cfg: &ModelConfig,
    vocab: &Vocab,
    examples: &[InstructionExample],
    strength: Strength,
) -> Result<f32> {
    if let Some(i) = examples.iter().position(|e| e.strength != strength) {
        return Err(Error::invalid(format!(
            "example {i} is {}, expected a {strength} batch",
            examples[i].strength
        )));
    }
    token_mean_loss(params, cfg, &encode_examples(examples, vocab))
}

/// `λ1·pretrain + λ2·weak + λ3·strong` over the three batches. Terms with a
/// zero weight are left out of the graph.
pub fn weighted_objective_in(
    g: &mut Graph,
    w: &ParamVars,
    cfg: &ModelConfig,
    batches: [&[Pair]; 3],
    weights: &LossWeights,
) -> Result<Var> {
    weights.validate()?;
    let mut acc: Option<Var> = None;
    for (pairs, lambda) in batches.into_iter().zip(weights.as_array()) {
        if lambda == 0.0 {
            continue;
        }
        let l = token_mean_loss_in(g, w, cfg, pairs)?;
        let l = g.scale(l, lambda as f32)?;
        acc = Some(match acc {
            Some(a) => g.add(a, l)?,
            None => l,
        });
    }
    Ok(acc.expect("validated weights have a positive entry"))
}
