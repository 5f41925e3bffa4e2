use std::fmt::Write as _;

use super::Phase;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub phase: Phase,
    /// 1-based within the phase.
    pub step: usize,
    pub loss: f32,
}

/// Validation losses measured after a phase (`None` = before training).
/// A component is `None` when its validation set is empty; the weighted
/// total is only defined when all three are present.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidationRecord {
    pub after: Option<Phase>,
    pub pretrain: Option<f32>,
    pub weak: Option<f32>,
    pub strong: Option<f32>,
    pub total: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub validation: Vec<ValidationRecord>,
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainLog {
    pub fn phase_losses(&self, phase: Phase) -> Vec<f32> {
        self.steps.iter().filter(|r| r.phase == phase).map(|r| r.loss).collect()
    }

    pub fn last_validation(&self) -> Option<&ValidationRecord> {
        self.validation.last()
    }

    /// `phase,step,loss`, one row per optimizer step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("phase,step,loss\n");
        for r in &self.steps {
            writeln!(out, "{},{},{}", r.phase, r.step, r.loss).unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Vec<StepRecord>> {
        let mut lines = text.lines();
        if lines.next() != Some("phase,step,loss") {
            return Err(Error::invalid("train log: missing phase,step,loss header"));
        }
        lines
            .enumerate()
            .map(|(i, line)| {
                let bad = || Error::invalid(format!("train log row {}: {line:?}", i + 1));
                let mut f = line.split(',');
                let (Some(p), Some(s), Some(l), None) = (f.next(), f.next(), f.next(), f.next()) else {
                    return Err(bad());
                };
                Ok(StepRecord {
                    phase: p.parse()?,
                    step: s.parse().map_err(|_| bad())?,
                    loss: l.parse().map_err(|_| bad())?,
                })
            })
            .collect()
    }

    /// `after,pretrain,weak,strong,total`; `after` is `init` before training.
    pub fn validation_csv(&self) -> String {
        let mut out = String::from("after,pretrain,weak,strong,total\n");
        for r in &self.validation {
            let after = r.after.map_or("init", Phase::as_str);
            writeln!(
                out,
                "{after},{},{},{},{}",
                opt(r.pretrain),
                opt(r.weak),
                opt(r.strong),
                opt(r.total)
            )
            .unwrap();
        }
        out
    }
}
