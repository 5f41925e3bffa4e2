//! Instruction/story records, JSONL I/O, the synthetic corpus and batching.

mod batch;
mod jsonl;
pub mod synth;

pub use batch::{batch_iter, Batch, BatchIter};
pub use jsonl::{load_jsonl, read_jsonl, write_jsonl};
pub use synth::{synth_corpus, SynthKnobs};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strength {
    Weak,
    Strong,
}

impl Strength {
    pub fn as_str(self) -> &'static str {
        match self {
            Strength::Weak => "weak",
            Strength::Strong => "strong",
        }
    }
}

impl std::fmt::Display for Strength {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionExample {
    pub instruction: String,
    pub strength: Strength,
    pub story: String,
}

/// Train/validation/test examples plus the story-only pretraining pool.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusSplit {
    pub train: Vec<InstructionExample>,
    pub validation: Vec<InstructionExample>,
    pub test: Vec<InstructionExample>,
    /// Distinct training stories, instructions stripped.
    pub pretrain: Vec<String>,
}

impl CorpusSplit {
    /// Builds a split from explicit example lists; the pretraining pool is
    /// the distinct training stories in first-seen order.
    pub fn from_parts(
        train: Vec<InstructionExample>,
        validation: Vec<InstructionExample>,
        test: Vec<InstructionExample>,
    ) -> Self {
        let pretrain = story_pool(&train);
        CorpusSplit {
            train,
            validation,
            test,
            pretrain,
        }
    }

    /// Every instruction and story, for vocabulary building.
    pub fn texts(&self) -> Vec<&str> {
        self.train
            .iter()
            .chain(&self.validation)
            .chain(&self.test)
            .flat_map(|e| [e.instruction.as_str(), e.story.as_str()])
            .chain(self.pretrain.iter().map(String::as_str))
            .collect()
    }
}

pub fn story_pool(examples: &[InstructionExample]) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    examples
        .iter()
        .filter(|e| seen.insert(e.story.as_str()))
        .map(|e| e.story.clone())
        .collect()
}

pub fn with_strength(examples: &[InstructionExample], strength: Strength) -> Vec<InstructionExample> {
    examples.iter().filter(|e| e.strength == strength).cloned().collect()
}
