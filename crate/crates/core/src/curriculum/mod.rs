//! Staged training: story pretraining, then weak-instruction tuning, then
//! strong-instruction tuning, with an optional joint mode that optimises the
//! λ-weighted sum of all three losses at once.

mod log;
mod loss;
mod optim;
mod train;

pub use log::{StepRecord, TrainLog, ValidationRecord};
pub use loss::{
    encode_examples, instruction_loss, pretrain_loss, pretrain_pairs, token_mean_loss, token_mean_loss_in,
    weighted_objective_in, Pair,
};
pub use optim::{clip_global_norm, Adam};
pub use train::{run_curriculum, run_joint, run_phase, validate, CurriculumOutput, TrainData};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Pretrain,
    Weak,
    Strong,
    /// All three losses at once, weighted by [`LossWeights`].
    Joint,
}

impl Phase {
    pub const SEQUENTIAL: [Phase; 3] = [Phase::Pretrain, Phase::Weak, Phase::Strong];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Weak => "weak",
            Phase::Strong => "strong",
            Phase::Joint => "joint",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Phase::Pretrain),
            "weak" => Ok(Phase::Weak),
            "strong" => Ok(Phase::Strong),
            "joint" => Ok(Phase::Joint),
            _ => Err(Error::invalid(format!("unknown phase {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self> {
        let w = LossWeights {
            lambda1,
            lambda2,
            lambda3,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ls = [self.lambda1, self.lambda2, self.lambda3];
        if ls.iter().any(|l| !l.is_finite() || *l < 0.0) || ls.iter().all(|&l| l == 0.0) {
            return Err(Error::invalid(format!(
                "loss weights must be finite, nonnegative and not all zero, got {ls:?}"
            )));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.lambda1, self.lambda2, self.lambda3]
    }
}

/// `λ1·lp + λ2·lw + λ3·ls`.
pub fn total_loss(lp: f64, lw: f64, ls: f64, w: &LossWeights) -> f64 {
    w.lambda1 * lp + w.lambda2 * lw + w.lambda3 * ls
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseSpec {
    pub steps: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
}

impl Default for PhaseSpec {
    fn default() -> Self {
        PhaseSpec {
            steps: 0,
            learning_rate: 1e-3,
            batch_size: 16,
        }
    }
}

impl PhaseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!(
                "phase needs batch_size >= 1 and a positive learning rate, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Per-phase settings. Phases always run pretrain, weak, strong; a phase
/// with zero steps is skipped. Pretraining reads the story pool, the weak
/// and strong phases read the training examples of that strength.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhasePlan {
    pub pretrain: PhaseSpec,
    pub weak: PhaseSpec,
    pub strong: PhaseSpec,
}

impl PhasePlan {
    pub fn spec(&self, phase: Phase) -> Option<&PhaseSpec> {
        match phase {
            Phase::Pretrain => Some(&self.pretrain),
            Phase::Weak => Some(&self.weak),
            Phase::Strong => Some(&self.strong),
            Phase::Joint => None,
        }
    }

    /// Phases in execution order.
    pub fn phases(&self) -> [(Phase, &PhaseSpec); 3] {
        [
            (Phase::Pretrain, &self.pretrain),
            (Phase::Weak, &self.weak),
            (Phase::Strong, &self.strong),
        ]
    }

    pub fn total_steps(&self) -> usize {
        self.phases().iter().map(|(_, s)| s.steps).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.phases().iter().try_for_each(|(_, s)| s.validate())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Schedule {
    Sequential(PhasePlan),
    Joint(PhaseSpec),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub schedule: Schedule,
    pub weights: LossWeights,
    pub clip_norm: f32,
}

impl TrainConfig {
    pub fn sequential(seed: u64, plan: PhasePlan) -> Self {
        TrainConfig {
            seed,
            schedule: Schedule::Sequential(plan),
            weights: LossWeights::default(),
            clip_norm: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return Err(Error::invalid(format!("clip norm must be positive, got {}", self.clip_norm)));
        }
        match &self.schedule {
            Schedule::Sequential(plan) => plan.validate(),
            Schedule::Joint(spec) => spec.validate(),
        }
    }
}
