use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::InstructionExample;
use crate::tokenizer::{TokenId, TokenSeq, Vocab, PAD};
use crate::{rng, Error, Result};

/// One padded batch. Row `r` came from input example `indices[r]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub instructions: Vec<Vec<TokenId>>,
    pub stories: Vec<Vec<TokenId>>,
    /// `true` where `stories` holds a real token.
    pub pad_mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Rows with padding stripped, as (instruction, story) sequences.
    pub fn pairs(&self) -> impl Iterator<Item = (TokenSeq, TokenSeq)> + '_ {
        let strip = |row: &[TokenId]| row.iter().copied().filter(|&t| t != PAD).collect();
        self.instructions
            .iter()
            .zip(&self.stories)
            .map(move |(i, s)| (TokenSeq::instruction(strip(i)), TokenSeq::story(strip(s))))
    }
}

/// Endless stream of batches; the example order is reshuffled at the start of
/// every epoch. The last batch of an epoch may be short.
#[derive(Clone, Debug)]
pub struct BatchIter {
    pairs: Vec<(TokenSeq, TokenSeq)>,
    batch_size: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    epoch: usize,
}

impl BatchIter {
    pub fn new(pairs: Vec<(TokenSeq, TokenSeq)>, batch_size: usize, seed: u64, max_len: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if pairs.is_empty() {
            return Err(Error::invalid("cannot batch an empty example set"));
        }
        for (i, (ins, story)) in pairs.iter().enumerate() {
            let len = ins.len().max(story.len());
            if len > max_len {
                return Err(Error::invalid(format!(
                    "example {i} has {len} tokens, more than max_len {max_len}"
                )));
            }
        }
        let order = (0..pairs.len()).collect();
        Ok(BatchIter {
            pairs,
            batch_size,
            rng: rng::stream(seed, "batch"),
            order,
            cursor: 0,
            epoch: 0,
        })
    }

    /// Completed epochs so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.pairs.len().div_ceil(self.batch_size)
    }

    pub fn next_batch(&mut self) -> Batch {
        if self.cursor == 0 {
            self.order.shuffle(&mut self.rng);
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let indices = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        if self.cursor == self.order.len() {
            self.cursor = 0;
            self.epoch += 1;
        }
        self.assemble(indices)
    }

    fn assemble(&self, indices: Vec<usize>) -> Batch {
        let pad = |rows: Vec<&[TokenId]>| {
            let width = rows.iter().map(|r| r.len()).max().unwrap_or(0);
            rows.into_iter()
                .map(|r| {
                    let mut v = r.to_vec();
                    v.resize(width, PAD);
                    v
                })
                .collect::<Vec<_>>()
        };
        let instructions = pad(indices.iter().map(|&i| &self.pairs[i].0.ids[..]).collect());
        let stories = pad(indices.iter().map(|&i| &self.pairs[i].1.ids[..]).collect());
        let pad_mask = stories
            .iter()
            .map(|r| r.iter().map(|&t| t != PAD).collect())
            .collect();
        Batch {
            indices,
            instructions,
            stories,
            pad_mask,
        }
    }
}

impl Iterator for BatchIter {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        Some(self.next_batch())
    }
}

/// Encodes examples (instruction with BOS/EOS, story with EOS) and batches
/// them.
pub fn batch_iter(
    examples: &[InstructionExample],
    batch_size: usize,
    seed: u64,
    vocab: &Vocab,
    max_len: usize,
) -> Result<BatchIter> {
    let pairs = examples
        .iter()
        .map(|e| (vocab.encode(&e.instruction, true), vocab.encode_story(&e.story)))
        .collect();
    BatchIter::new(pairs, batch_size, seed, max_len)
}
