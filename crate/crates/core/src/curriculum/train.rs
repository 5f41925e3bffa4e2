use super::loss::{pretrain_pairs, token_mean_loss, token_mean_loss_in, weighted_objective_in, Pair};
use super::{clip_global_norm, total_loss, Adam, LossWeights, Phase, PhaseSpec, Schedule, StepRecord, TrainConfig,
    TrainLog, ValidationRecord};
use crate::data::{story_pool, InstructionExample, Strength};
use crate::data::BatchIter;
use crate::model::{ModelConfig, ModelParams, ParamVars};
use crate::numerics::{Graph, Var};
use crate::tokenizer::Vocab;
use crate::{rng, Error, Result};

/// Encoded datasets for the three losses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainData {
    /// Stories behind a `[BOS]` encoder context.
    pub pretrain: Vec<Pair>,
    pub weak: Vec<Pair>,
    pub strong: Vec<Pair>,
}

impl TrainData {
    pub fn new(examples: &[InstructionExample], stories: &[String], vocab: &Vocab) -> Self {
        let encoded = |strength| {
            examples
                .iter()
                .filter(|e| e.strength == strength)
                .map(|e| (vocab.encode(&e.instruction, true), vocab.encode_story(&e.story)))
                .collect()
        };
        let stories: Vec<_> = stories.iter().map(|s| vocab.encode_story(s)).collect();
        TrainData {
            pretrain: pretrain_pairs(&stories),
            weak: encoded(Strength::Weak),
            strong: encoded(Strength::Strong),
        }
    }

    /// Uses the distinct stories of `examples` as the story set.
    pub fn from_examples(examples: &[InstructionExample], vocab: &Vocab) -> Self {
        TrainData::new(examples, &story_pool(examples), vocab)
    }

    pub fn get(&self, phase: Phase) -> &[Pair] {
        match phase {
            Phase::Pretrain => &self.pretrain,
            Phase::Weak => &self.weak,
            Phase::Strong | Phase::Joint => &self.strong,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CurriculumOutput {
    pub params: ModelParams,
    /// Parameters at initialisation (`None`) and at the end of every phase
    /// that ran.
    pub checkpoints: Vec<(Option<Phase>, ModelParams)>,
    pub log: TrainLog,
}

fn diverged(phase: Phase, step: usize) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::Divergence {
            phase: phase.to_string(),
            step,
        },
        e => e,
    }
}

/// Builds the loss with `build`, backpropagates, clips and applies one Adam
/// update. Returns the loss before the update.
fn optimizer_step(
    params: &mut ModelParams,
    opt: &mut Adam,
    clip_norm: f32,
    build: impl FnOnce(&mut Graph, &ParamVars) -> Result<Var>,
) -> Result<f32> {
    let mut g = Graph::new();
    let w = params.bind(&mut g);
    let l = build(&mut g, &w)?;
    let loss = g.scalar(l)?;
    let mut grads = g.backward(l)?;
    let mut flat: Vec<Vec<f32>> = w
        .leaves()
        .into_iter()
        .zip(params.leaves())
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    clip_global_norm(&mut flat, clip_norm);
    opt.step(params, &flat)?;
    Ok(loss)
}

fn batches(data: &[Pair], spec: &PhaseSpec, seed: u64, phase: Phase, cfg: &ModelConfig) -> Result<BatchIter> {
    if data.is_empty() {
        return Err(Error::invalid(format!("phase {phase} has steps but no training data")));
    }
    BatchIter::new(data.to_vec(), spec.batch_size, rng::sub_seed(seed, phase.as_str()), cfg.max_len)
}

/// Runs `spec.steps` optimizer updates on one phase's loss. Batches are drawn
/// from a stream seeded by `seed` and the phase name.
#[allow(clippy::too_many_arguments)]
pub fn run_phase(
    params: &mut ModelParams,
    cfg: &ModelConfig,
    phase: Phase,
    spec: &PhaseSpec,
    data: &[Pair],
    opt: &mut Adam,
    clip_norm: f32,
    seed: u64,
) -> Result<Vec<StepRecord>> {
    if spec.steps == 0 {
        return Ok(Vec::new());
    }
    spec.validate()?;
    let mut it = batches(data, spec, seed, phase, cfg)?;
    let mut log = Vec::with_capacity(spec.steps);
    for step in 1..=spec.steps {
        let batch: Vec<Pair> = it.next_batch().pairs().collect();
        let loss = optimizer_step(params, opt, clip_norm, |g, w| token_mean_loss_in(g, w, cfg, &batch))
            .map_err(diverged(phase, step))?;
        log.push(StepRecord { phase, step, loss });
    }
    Ok(log)
}

/// Optimises the weighted sum of all three losses, drawing one batch per
/// loss at every step.
#[allow(clippy::too_many_arguments)]
pub fn run_joint(
    params: &mut ModelParams,
    cfg: &ModelConfig,
    spec: &PhaseSpec,
    data: &TrainData,
    weights: &LossWeights,
    opt: &mut Adam,
    clip_norm: f32,
    seed: u64,
) -> Result<Vec<StepRecord>> {
    if spec.steps == 0 {
        return Ok(Vec::new());
    }
    spec.validate()?;
    weights.validate()?;
    let mut iters = Vec::new();
    for (phase, lambda) in Phase::SEQUENTIAL.into_iter().zip(weights.as_array()) {
        iters.push(if lambda > 0.0 {
            Some(batches(data.get(phase), spec, seed, phase, cfg)?)
        } else {
            None
        });
    }
    let mut log = Vec::with_capacity(spec.steps);
    for step in 1..=spec.steps {
        let drawn: Vec<Vec<Pair>> = iters
            .iter_mut()
            .map(|it| it.as_mut().map(|it| it.next_batch().pairs().collect()).unwrap_or_default())
            .collect();
        let loss = optimizer_step(params, opt, clip_norm, |g, w| {
            weighted_objective_in(g, w, cfg, [&drawn[0], &drawn[1], &drawn[2]], weights)
        })
        .map_err(diverged(Phase::Joint, step))?;
        log.push(StepRecord {
            phase: Phase::Joint,
            step,
            loss,
        });
    }
    Ok(log)
}

/// Measures the three losses and their weighted total on `data`.
pub fn validate(
    params: &ModelParams,
    cfg: &ModelConfig,
    data: &TrainData,
    weights: &LossWeights,
    after: Option<Phase>,
) -> Result<ValidationRecord> {
    let measure = |pairs: &[Pair]| -> Result<Option<f32>> {
        if pairs.is_empty() {
            Ok(None)
        } else {
            token_mean_loss(params, cfg, pairs).map(Some)
        }
    };
    let pretrain = measure(&data.pretrain)?;
    let weak = measure(&data.weak)?;
    let strong = measure(&data.strong)?;
    let total = match (pretrain, weak, strong) {
        (Some(p), Some(w), Some(s)) => Some(total_loss(p.into(), w.into(), s.into(), weights)),
        _ => None,
    };
    Ok(ValidationRecord {
        after,
        pretrain,
        weak,
        strong,
        total,
    })
}

/// Initialises parameters from `tc.seed` and trains them through the
/// schedule. Each phase gets a fresh optimizer; validation losses are
/// recorded before training and after every phase that ran.
pub fn run_curriculum(
    tc: &TrainConfig,
    cfg: &ModelConfig,
    train: &TrainData,
    val: &TrainData,
) -> Result<CurriculumOutput> {
    tc.validate()?;
    let mut params = ModelParams::init(cfg, tc.seed)?;
    let mut log = TrainLog::default();
    let mut checkpoints = vec![(None, params.clone())];
    log.validation.push(validate(&params, cfg, val, &tc.weights, None)?);

    let mut finish = |phase, params: &ModelParams, log: &mut TrainLog| -> Result<()> {
        log.validation.push(validate(params, cfg, val, &tc.weights, Some(phase))?);
        checkpoints.push((Some(phase), params.clone()));
        Ok(())
    };
    match &tc.schedule {
        Schedule::Sequential(plan) => {
            for (phase, spec) in plan.phases() {
                if spec.steps == 0 {
                    continue;
                }
                let mut opt = Adam::new(spec.learning_rate);
                let records = run_phase(
                    &mut params,
                    cfg,
                    phase,
                    spec,
                    train.get(phase),
                    &mut opt,
                    tc.clip_norm,
                    tc.seed,
                )?;
                log.steps.extend(records);
                finish(phase, &params, &mut log)?;
            }
        }
        Schedule::Joint(spec) => {
            if spec.steps > 0 {
                let mut opt = Adam::new(spec.learning_rate);
                let records = run_joint(&mut params, cfg, spec, train, &tc.weights, &mut opt, tc.clip_norm, tc.seed)?;
                log.steps.extend(records);
                finish(Phase::Joint, &params, &mut log)?;
            }
        }
    }
    Ok(CurriculumOutput {
        params,
        checkpoints,
        log,
    })
}
