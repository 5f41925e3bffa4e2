//! Template grammar for the synthetic story corpus.
//!
//! A production is a (protagonist, fear, helper) triple. The strong
//! instruction names all three slots and therefore fixes the story; the weak
//! instruction names only the protagonist.

use rand::seq::SliceRandom;

use super::{CorpusSplit, InstructionExample, Strength};
use crate::{rng, Error, Result};

pub const PROTAGONISTS: [&str; 16] = [
    "dragon", "knight", "princess", "robot", "fox", "bear", "mouse", "giant", "pirate", "rabbit",
    "turtle", "lion", "whale", "prince", "farmer", "penguin",
];

pub const FEARS: [&str; 8] = [
    "fire", "water", "the dark", "heights", "thunder", "the forest", "the sea", "spiders",
];

pub const HELPERS: [&str; 8] = [
    "wise owl", "kind witch", "brave squirrel", "gentle wolf", "little bird", "clever cat",
    "young sailor", "friendly frog",
];

/// How many entries of each slot list the grammar draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthKnobs {
    pub protagonists: usize,
    pub fears: usize,
    pub helpers: usize,
}

impl Default for SynthKnobs {
    fn default() -> Self {
        SynthKnobs {
            protagonists: PROTAGONISTS.len(),
            fears: FEARS.len(),
            helpers: HELPERS.len(),
        }
    }
}

impl SynthKnobs {
    pub fn validate(&self) -> Result<()> {
        let within = |n: usize, max: usize| (1..=max).contains(&n);
        if !within(self.protagonists, PROTAGONISTS.len())
            || !within(self.fears, FEARS.len())
            || !within(self.helpers, HELPERS.len())
        {
            return Err(Error::invalid(format!(
                "grammar knobs {self:?} out of range (max {}/{}/{})",
                PROTAGONISTS.len(),
                FEARS.len(),
                HELPERS.len()
            )));
        }
        Ok(())
    }

    pub fn num_productions(&self) -> usize {
        self.protagonists * self.fears * self.helpers
    }

    /// Every production in lexicographic slot order.
    pub fn productions(&self) -> Vec<Production> {
        let mut out = Vec::with_capacity(self.num_productions());
        for p in 0..self.protagonists {
            for f in 0..self.fears {
                for h in 0..self.helpers {
                    out.push(Production {
                        protagonist: p,
                        fear: f,
                        helper: h,
                    });
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Production {
    pub protagonist: usize,
    pub fear: usize,
    pub helper: usize,
}

impl Production {
    pub fn weak_instruction(&self) -> String {
        format!("write a story about a {} .", PROTAGONISTS[self.protagonist])
    }

    pub fn strong_instruction(&self) -> String {
        format!(
            "write a story about a {} afraid of {} who meets a {} .",
            PROTAGONISTS[self.protagonist], FEARS[self.fear], HELPERS[self.helper]
        )
    }

    pub fn story(&self) -> String {
        let (p, f, h) = (
            PROTAGONISTS[self.protagonist],
            FEARS[self.fear],
            HELPERS[self.helper],
        );
        format!(
            "once upon a time a {p} was afraid of {f} . one day the {p} met a {h} . \
             the {h} helped the {p} face its fear . the {p} was never afraid again ."
        )
    }

    pub fn example(&self, strength: Strength) -> InstructionExample {
        let instruction = match strength {
            Strength::Weak => self.weak_instruction(),
            Strength::Strong => self.strong_instruction(),
        };
        InstructionExample {
            instruction,
            strength,
            story: self.story(),
        }
    }
}

/// Generates `n_examples` examples from distinct productions, two per story
/// (weak then strong); with odd `n_examples` the last story gets only its
/// strong example. Stories are split 80/10/10 into train/validation/test, so
/// both instructions of a story always land in the same split.
pub fn synth_corpus(seed: u64, n_examples: usize, knobs: SynthKnobs) -> Result<CorpusSplit> {
    knobs.validate()?;
    if n_examples < 10 {
        return Err(Error::invalid(format!(
            "need at least 10 examples for disjoint splits, got {n_examples}"
        )));
    }
    let n_stories = n_examples.div_ceil(2);
    if n_stories > knobs.num_productions() {
        return Err(Error::invalid(format!(
            "{n_examples} examples need {n_stories} distinct stories but the grammar has {}",
            knobs.num_productions()
        )));
    }
    let mut productions = knobs.productions();
    productions.shuffle(&mut rng::stream(seed, "data"));
    productions.truncate(n_stories);

    let mut examples: Vec<Vec<InstructionExample>> = productions
        .iter()
        .map(|p| vec![p.example(Strength::Weak), p.example(Strength::Strong)])
        .collect();
    if n_examples % 2 == 1 {
        examples.last_mut().expect("n_stories >= 5").remove(0);
    }

    let n_val = (n_stories / 10).max(1);
    let n_test = n_val;
    let n_train = n_stories - n_val - n_test;
    let mut stories = examples.into_iter();
    let mut take = |k: usize| stories.by_ref().take(k).flatten().collect::<Vec<_>>();
    let train = take(n_train);
    let validation = take(n_val);
    let test = take(n_test);
    Ok(CorpusSplit::from_parts(train, validation, test))
}

#[cfg(test)]
mod tests {
    use std::collections::{HashMap, HashSet};

    use super::*;
    use crate::tokenizer::{tokenize, Vocab};

    #[test]
    fn same_seed_same_corpus() {
        let a = synth_corpus(7, 200, SynthKnobs::default()).unwrap();
        assert_eq!(a, synth_corpus(7, 200, SynthKnobs::default()).unwrap());
        assert_ne!(a, synth_corpus(8, 200, SynthKnobs::default()).unwrap());
    }

    #[test]
    fn strong_instruction_determines_story() {
        // Inversion oracle: index every production by its strong instruction
        // and check that each instruction names exactly one story.
        let knobs = SynthKnobs::default();
        let mut by_instruction: HashMap<String, Vec<String>> = HashMap::new();
        for p in knobs.productions() {
            by_instruction
                .entry(p.strong_instruction())
                .or_default()
                .push(p.story());
        }
        assert_eq!(by_instruction.len(), knobs.num_productions());
        let corpus = synth_corpus(3, 301, knobs).unwrap();
        for ex in corpus.train.iter().chain(&corpus.validation).chain(&corpus.test) {
            if ex.strength == Strength::Strong {
                assert_eq!(by_instruction[&ex.instruction], vec![ex.story.clone()]);
            }
        }
    }

    #[test]
    fn weak_instruction_names_only_the_protagonist() {
        let p = Production {
            protagonist: 0,
            fear: 0,
            helper: 0,
        };
        assert_eq!(p.weak_instruction(), "write a story about a dragon .");
        assert_eq!(
            p.strong_instruction(),
            "write a story about a dragon afraid of fire who meets a wise owl ."
        );
        let q = Production { fear: 3, helper: 5, ..p };
        assert_eq!(p.weak_instruction(), q.weak_instruction());
        assert_ne!(p.story(), q.story());
    }

    #[test]
    fn balanced_disjoint_exhaustive_splits() {
        for n in [10, 11, 57, 200, 2048] {
            let c = synth_corpus(1, n, SynthKnobs::default()).unwrap();
            let all: Vec<_> = c.train.iter().chain(&c.validation).chain(&c.test).collect();
            assert_eq!(all.len(), n);
            let weak = all.iter().filter(|e| e.strength == Strength::Weak).count();
            assert!((n - weak).abs_diff(weak) <= 1, "n={n} weak={weak}");
            assert_eq!(all.iter().collect::<HashSet<_>>().len(), n, "duplicate examples");
            let stories = |xs: &[InstructionExample]| {
                xs.iter().map(|e| e.story.clone()).collect::<HashSet<_>>()
            };
            let (tr, va, te) = (stories(&c.train), stories(&c.validation), stories(&c.test));
            assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
            assert!(!va.is_empty() && !te.is_empty());
            assert_eq!(c.pretrain.len(), tr.len());
        }
    }

    #[test]
    fn fits_in_desk_context() {
        let knobs = SynthKnobs::default();
        let longest = knobs
            .productions()
            .iter()
            .map(|p| tokenize(&p.strong_instruction()).len() + 2 + tokenize(&p.story()).len() + 1)
            .max()
            .unwrap();
        assert!(longest <= 64, "{longest}");
        let c = synth_corpus(0, 2048, knobs).unwrap();
        let vocab = Vocab::build(&c.texts(), 1, 1000).unwrap();
        assert!(vocab.len() < 80, "{}", vocab.len());
    }

    #[test]
    fn rejects_bad_sizes() {
        let knobs = SynthKnobs {
            protagonists: 1,
            fears: 2,
            helpers: 2,
        };
        assert!(synth_corpus(0, 9, SynthKnobs::default()).is_err());
        assert!(synth_corpus(0, 10, knobs).is_err());
        assert!(synth_corpus(0, 2049, SynthKnobs::default()).is_err());
        let bad = SynthKnobs {
            protagonists: 17,
            ..SynthKnobs::default()
        };
        assert!(synth_corpus(0, 100, bad).is_err());
    }
}
