//! Training run configuration as `key=value` text.
//!
//! Blank lines and lines starting with `#` are ignored. Keys:
//!
//! ```text
//! seed            run seed (init, batching)
//! mode            sequential | joint
//! pretrain.steps  pretrain.lr  pretrain.batch_size
//! weak.steps      weak.lr      weak.batch_size
//! strong.steps    strong.lr    strong.batch_size
//! joint.steps     joint.lr     joint.batch_size
//! lambda1 lambda2 lambda3      loss weights
//! clip_norm       global gradient-norm cap
//! d_model n_heads n_layers_enc n_layers_dec d_ff max_len
//! min_count max_vocab          vocabulary build
//! ```

use std::fmt::Write as _;
use std::str::FromStr;

use storytune::curriculum::{LossWeights, PhasePlan, PhaseSpec, Schedule, TrainConfig};
use storytune::model::ModelConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub joint: bool,
    pub plan: PhasePlan,
    pub joint_spec: PhaseSpec,
    pub weights: LossWeights,
    pub clip_norm: f32,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub min_count: usize,
    pub max_vocab: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let desk = ModelConfig::desk(0);
        let phase = |steps| PhaseSpec {
            steps,
            learning_rate: 1e-3,
            batch_size: 16,
        };
        RunConfig {
            seed: 0,
            joint: false,
            plan: PhasePlan {
                pretrain: phase(200),
                weak: phase(200),
                strong: phase(400),
            },
            joint_spec: phase(800),
            weights: LossWeights::default(),
            clip_norm: 1.0,
            d_model: desk.d_model,
            n_heads: desk.n_heads,
            n_layers_enc: desk.n_layers_enc,
            n_layers_dec: desk.n_layers_dec,
            d_ff: desk.d_ff,
            max_len: desk.max_len,
            min_count: 1,
            max_vocab: 10_000,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value {value:?} for {key}"))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let value = value.trim();
        if let Some((phase, field)) = key.split_once('.') {
            let spec = match phase {
                "pretrain" => &mut self.plan.pretrain,
                "weak" => &mut self.plan.weak,
                "strong" => &mut self.plan.strong,
                "joint" => &mut self.joint_spec,
                _ => return Err(format!("unknown config key {key:?}")),
            };
            match field {
                "steps" => spec.steps = parse(key, value)?,
                "lr" => spec.learning_rate = parse(key, value)?,
                "batch_size" => spec.batch_size = parse(key, value)?,
                _ => return Err(format!("unknown config key {key:?}")),
            }
            return Ok(());
        }
        match key {
            "seed" => self.seed = parse(key, value)?,
            "mode" => {
                self.joint = match value {
                    "sequential" => false,
                    "joint" => true,
                    _ => return Err(format!("mode must be sequential or joint, got {value:?}")),
                }
            }
            "lambda1" => self.weights.lambda1 = parse(key, value)?,
            "lambda2" => self.weights.lambda2 = parse(key, value)?,
            "lambda3" => self.weights.lambda3 = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "d_model" => self.d_model = parse(key, value)?,
            "n_heads" => self.n_heads = parse(key, value)?,
            "n_layers_enc" => self.n_layers_enc = parse(key, value)?,
            "n_layers_dec" => self.n_layers_dec = parse(key, value)?,
            "d_ff" => self.d_ff = parse(key, value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "min_count" => self.min_count = parse(key, value)?,
            "max_vocab" => self.max_vocab = parse(key, value)?,
            _ => return Err(format!("unknown config key {key:?}")),
        }
        Ok(())
    }

    /// Applies every `key=value` line of `text`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value, got {line:?}", i + 1))?;
            self.set(k.trim(), v).map_err(|e| format!("line {}: {e}", i + 1))?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| writeln!(out, "{k}={v}").unwrap();
        kv("seed", &self.seed);
        kv("mode", &if self.joint { "joint" } else { "sequential" });
        for (name, s) in [
            ("pretrain", &self.plan.pretrain),
            ("weak", &self.plan.weak),
            ("strong", &self.plan.strong),
            ("joint", &self.joint_spec),
        ] {
            kv(&format!("{name}.steps"), &s.steps);
            kv(&format!("{name}.lr"), &s.learning_rate);
            kv(&format!("{name}.batch_size"), &s.batch_size);
        }
        kv("lambda1", &self.weights.lambda1);
        kv("lambda2", &self.weights.lambda2);
        kv("lambda3", &self.weights.lambda3);
        kv("clip_norm", &self.clip_norm);
        kv("d_model", &self.d_model);
        kv("n_heads", &self.n_heads);
        kv("n_layers_enc", &self.n_layers_enc);
        kv("n_layers_dec", &self.n_layers_dec);
        kv("d_ff", &self.d_ff);
        kv("max_len", &self.max_len);
        kv("min_count", &self.min_count);
        kv("max_vocab", &self.max_vocab);
        out
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            schedule: if self.joint {
                Schedule::Joint(self.joint_spec)
            } else {
                Schedule::Sequential(self.plan)
            },
            weights: self.weights,
            clip_norm: self.clip_norm,
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers_enc: self.n_layers_enc,
            n_layers_dec: self.n_layers_dec,
            d_ff: self.d_ff,
            max_len: self.max_len,
            vocab_size,
        }
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<(), String> {
        self.train_config().validate().map_err(|e| e.to_string())?;
        // Any vocabulary size works for the shape checks.
        self.model_config(16).validate().map_err(|e| e.to_string())?;
        if self.min_count == 0 {
            return Err("min_count must be at least 1".into());
        }
        Ok(())
    }
}
