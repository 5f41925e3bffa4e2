//! Word-level vocabulary and codec.
//!
//! Text is lowercased and split into runs of alphanumeric characters; every
//! other non-whitespace character becomes a token of its own. Ids 0..=4 are
//! reserved for the special tokens below.

use std::collections::HashMap;

use crate::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const SEP: TokenId = 4;

pub const RESERVED: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<unk>", "<sep>"];

/// Smallest vocabulary that fits the reserved tokens plus one word.
pub const MIN_VOCAB_SIZE: usize = RESERVED.len() + 1;

/// Splits text into lowercase word and punctuation tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Canonical form of `text`: its tokens joined by single spaces.
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeqRole {
    Instruction,
    Story,
}

/// Encoded token ids tagged with what they encode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<TokenId>,
    pub role: SeqRole,
}

impl TokenSeq {
    pub fn instruction(ids: Vec<TokenId>) -> Self {
        TokenSeq {
            ids,
            role: SeqRole::Instruction,
        }
    }

    pub fn story(ids: Vec<TokenId>) -> Self {
        TokenSeq {
            ids,
            role: SeqRole::Story,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::invalid(format!("vocab: duplicate token {t:?}")));
            }
        }
        Ok(Vocab { tokens, ids })
    }

    /// Builds a vocabulary from word frequencies. Words seen fewer than
    /// `min_count` times are dropped; the rest are ordered by descending count,
    /// ties broken lexicographically, and truncated so the total size
    /// (reserved tokens included) is at most `max_size`.
    pub fn build<S: AsRef<str>>(corpus: &[S], min_count: usize, max_size: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::invalid("build_vocab: empty corpus"));
        }
        if max_size < MIN_VOCAB_SIZE {
            return Err(Error::invalid(format!(
                "build_vocab: max_size {max_size} is below the minimum of {MIN_VOCAB_SIZE}"
            )));
        }
        let min_count = min_count.max(1);
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in corpus {
            for tok in tokenize(text.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        words.truncate(max_size - RESERVED.len());

        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|(w, _)| w))
            .collect();
        Vocab::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn token_of(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_reserved(id: TokenId) -> bool {
        (id as usize) < RESERVED.len()
    }

    /// Encodes text as an instruction sequence. Unknown words map to UNK.
    pub fn encode(&self, text: &str, add_bos_eos: bool) -> TokenSeq {
        let words = tokenize(text)
            .into_iter()
            .map(|w| self.id_of(&w).unwrap_or(UNK));
        let ids = if add_bos_eos {
            std::iter::once(BOS).chain(words).chain(std::iter::once(EOS)).collect()
        } else {
            words.collect()
        };
        TokenSeq::instruction(ids)
    }

    /// Encodes a story as a decoder target: word ids followed by EOS.
    pub fn encode_story(&self, text: &str) -> TokenSeq {
        let mut ids = self.encode(text, false).ids;
        ids.push(EOS);
        TokenSeq::story(ids)
    }

    /// Joins the words of `ids` with single spaces, dropping reserved tokens.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut words = Vec::with_capacity(ids.len());
        for &id in ids {
            let tok = self.token_of(id).ok_or_else(|| {
                Error::invalid(format!("decode: id {id} out of range for vocab of {}", self.len()))
            })?;
            if !Vocab::is_reserved(id) {
                words.push(tok);
            }
        }
        Ok(words.join(" "))
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_owned).collect();
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::invalid("vocab: reserved tokens missing from the first lines"));
        }
        if tokens.iter().any(String::is_empty) {
            return Err(Error::invalid("vocab: empty token line"));
        }
        Vocab::from_tokens(tokens)
    }
}
