use std::fmt::Write as _;

use super::{bleu_n, perplexity, rouge_l};
use crate::curriculum::encode_examples;
use crate::data::{InstructionExample, Strength};
use crate::generate::{generate, GenParams};
use crate::model::{ModelConfig, ModelParams};
use crate::tokenizer::{tokenize, Vocab};
use crate::{Error, Result};

pub const REPORT_HEADER: &str = "checkpoint,split,count,bleu1,bleu2,rouge_l,perplexity";

const SPLITS: [&str; 3] = ["all", "weak", "strong"];
const METRICS: [&str; 4] = ["bleu1", "bleu2", "rouge_l", "perplexity"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub bleu1: f64,
    pub bleu2: f64,
    pub rouge_l: f64,
    pub perplexity: f64,
}

/// Corpus averages of sentence scores; `None` for an empty split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitScores {
    pub count: usize,
    pub scores: Option<Scores>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub all: SplitScores,
    pub weak: SplitScores,
    pub strong: SplitScores,
}

impl EvalReport {
    pub fn split(&self, strength: Option<Strength>) -> &SplitScores {
        match strength {
            None => &self.all,
            Some(Strength::Weak) => &self.weak,
            Some(Strength::Strong) => &self.strong,
        }
    }

    /// Three rows (all, weak, strong) under [`REPORT_HEADER`]. Empty splits
    /// leave the metric cells blank.
    pub fn to_csv(&self, checkpoint: &str) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for (name, s) in SPLITS.iter().zip([&self.all, &self.weak, &self.strong]) {
            let cells = match s.scores {
                Some(m) => format!("{},{},{},{}", m.bleu1, m.bleu2, m.rouge_l, m.perplexity),
                None => ",,,".into(),
            };
            writeln!(out, "{checkpoint},{name},{},{cells}", s.count).unwrap();
        }
        out
    }
}

#[derive(Default)]
struct Acc {
    count: usize,
    bleu1: f64,
    bleu2: f64,
    rouge_l: f64,
}

impl Acc {
    fn finish(&self, ppl: Option<f64>) -> SplitScores {
        let n = self.count as f64;
        SplitScores {
            count: self.count,
            scores: ppl.map(|perplexity| Scores {
                bleu1: self.bleu1 / n,
                bleu2: self.bleu2 / n,
                rouge_l: self.rouge_l / n,
                perplexity,
            }),
        }
    }
}

/// Scores `candidate(i, example)` against each reference story at the word
/// level. Perplexity comes from the model on the reference stories.
pub fn evaluate_with(
    params: &ModelParams,
    cfg: &ModelConfig,
    vocab: &Vocab,
    examples: &[InstructionExample],
    mut candidate: impl FnMut(usize, &InstructionExample) -> Result<String>,
) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::invalid("evaluate: empty example set"));
    }
    let mut accs: [Acc; 3] = Default::default();
    for (i, ex) in examples.iter().enumerate() {
        let cand = tokenize(&candidate(i, ex)?);
        let reference = tokenize(&ex.story);
        let b1 = bleu_n(&cand, &reference, 1)?;
        let b2 = bleu_n(&cand, &reference, 2)?;
        let rl = if cand.is_empty() { 0.0 } else { rouge_l(&cand, &reference)? };
        let slot = 1 + (ex.strength == Strength::Strong) as usize;
        for acc in [0, slot] {
            let a = &mut accs[acc];
            a.count += 1;
            a.bleu1 += b1;
            a.bleu2 += b2;
            a.rouge_l += rl;
        }
    }
    let ppl = |subset: Vec<InstructionExample>| -> Result<Option<f64>> {
        if subset.is_empty() {
            return Ok(None);
        }
        perplexity(params, cfg, &encode_examples(&subset, vocab)).map(Some)
    };
    let of = |s| examples.iter().filter(|e| e.strength == s).cloned().collect();
    Ok(EvalReport {
        all: accs[0].finish(ppl(examples.to_vec())?),
        weak: accs[1].finish(ppl(of(Strength::Weak))?),
        strong: accs[2].finish(ppl(of(Strength::Strong))?),
    })
}

/// Generates one story per example with `gp` and scores it. The token
/// budget is capped per example so instruction plus story fit in
/// `cfg.max_len`.
pub fn evaluate(
    params: &ModelParams,
    cfg: &ModelConfig,
    vocab: &Vocab,
    examples: &[InstructionExample],
    gp: &GenParams,
) -> Result<EvalReport> {
    evaluate_with(params, cfg, vocab, examples, |_, ex| {
        let len = vocab.encode(&ex.instruction, true).len();
        let room = cfg.max_len.saturating_sub(len);
        if room == 0 {
            return Err(Error::invalid(format!(
                "instruction {:?} leaves no room to generate within max_len {}",
                ex.instruction, cfg.max_len
            )));
        }
        let gp = GenParams {
            max_new_tokens: gp.max_new_tokens.min(room),
            ..*gp
        };
        Ok(generate(params, cfg, vocab, &ex.instruction, &gp)?.text)
    })
}

/// Reshapes evaluation CSVs into one row per checkpoint with a column per
/// (split, metric). Cells are copied verbatim. `inputs` holds
/// (source name, CSV text) pairs; the name only appears in errors.
pub fn merge_reports(inputs: &[(String, String)]) -> Result<String> {
    let mut order: Vec<String> = Vec::new();
    let mut cells: std::collections::HashMap<(String, String), Vec<String>> = Default::default();
    for (source, text) in inputs {
        let bad = |msg: String| Error::invalid(format!("{source}: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_HEADER) {
            return Err(bad(format!("expected header {REPORT_HEADER:?}")));
        }
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 || !SPLITS.contains(&f[1]) {
                return Err(bad(format!("malformed row {}: {line:?}", i + 2)));
            }
            let key = (f[0].to_string(), f[1].to_string());
            if cells.insert(key, f[3..].iter().map(|s| s.to_string()).collect()).is_some() {
                return Err(bad(format!("duplicate {} row for checkpoint {:?}", f[1], f[0])));
            }
            if !order.iter().any(|c| c == f[0]) {
                order.push(f[0].to_string());
            }
        }
    }
    let wide_splits = ["weak", "strong", "all"];
    let mut out = String::from("checkpoint");
    for s in wide_splits {
        for m in METRICS {
            write!(out, ",{s}_{m}").unwrap();
        }
    }
    out.push('\n');
    for ck in &order {
        out.push_str(ck);
        for s in wide_splits {
            let row = cells
                .get(&(ck.clone(), s.to_string()))
                .ok_or_else(|| Error::invalid(format!("checkpoint {ck:?} has no {s} row")))?;
            for c in row {
                write!(out, ",{c}").unwrap();
            }
        }
        out.push('\n');
    }
    Ok(out)
}
