use crate::model::ModelParams;
use crate::{Error, Result};

/// Scales all gradients in place so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f32>], max_norm: f32) -> f32 {
    let sq: f64 = grads
        .iter()
        .flatten()
        .map(|&g| f64::from(g) * f64::from(g))
        .sum();
    let norm = sq.sqrt() as f32;
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// Adam with bias correction and a constant learning rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(learning_rate: f32) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step as usize
    }

    /// One update; `grads` is aligned with `params.leaves()`.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Vec<f32>]) -> Result<()> {
        let mut leaves = params.leaves_mut();
        if grads.len() != leaves.len() {
            return Err(Error::invalid(format!(
                "adam: {} gradients for {} parameters",
                grads.len(),
                leaves.len()
            )));
        }
        if self.m.is_empty() {
            self.m = leaves.iter().map(|t| vec![0.0; t.numel()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let lr = self.learning_rate;
        for (((t, g), m), v) in leaves.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if g.len() != t.numel() {
                return Err(Error::invalid("adam: gradient length does not match its parameter"));
            }
            for (((p, &g), m), v) in t.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= lr * mh / (vh.sqrt() + self.eps);
            }
            crate::numerics::ensure_finite("adam", t.data())?;
        }
        Ok(())
    }
}
