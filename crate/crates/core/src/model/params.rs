use rand::Rng;

use super::ModelConfig;
use crate::numerics::{Graph, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights<T> {
    pub w_q: T,
    pub w_k: T,
    pub w_v: T,
    pub w_o: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward<T> {
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Norm<T> {
    pub gain: T,
    pub bias: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer<T> {
    pub self_norm: Norm<T>,
    pub self_attn: AttentionWeights<T>,
    pub ff_norm: Norm<T>,
    pub ff: FeedForward<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLayer<T> {
    pub self_norm: Norm<T>,
    pub self_attn: AttentionWeights<T>,
    pub cross_norm: Norm<T>,
    pub cross_attn: AttentionWeights<T>,
    pub ff_norm: Norm<T>,
    pub ff: FeedForward<T>,
}

/// Every learnable tensor of the model, generic over the leaf type so the
/// same tree holds stored tensors ([`ModelParams`]) or graph handles
/// ([`ParamVars`]).
///
/// The canonical order, used by [`Weights::leaves`] and the checkpoint
/// format, is: embedding; each encoder layer (self_norm gain/bias, w_q, w_k,
/// w_v, w_o, ff_norm gain/bias, w1, b1, w2, b2); encoder_norm gain/bias; each
/// decoder layer (self_norm, self_attn, cross_norm, cross_attn, ff_norm, ff);
/// decoder_norm gain/bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<T> {
    pub embedding: T,
    pub encoder: Vec<EncoderLayer<T>>,
    pub encoder_norm: Norm<T>,
    pub decoder: Vec<DecoderLayer<T>>,
    pub decoder_norm: Norm<T>,
}

pub type ModelParams = Weights<Tensor>;
pub type ParamVars = Weights<Var>;

impl<T> AttentionWeights<T> {
    fn leaves(&self) -> [&T; 4] {
        [&self.w_q, &self.w_k, &self.w_v, &self.w_o]
    }
    fn leaves_mut(&mut self) -> [&mut T; 4] {
        [&mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_o]
    }
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> AttentionWeights<U> {
        AttentionWeights {
            w_q: f(&self.w_q),
            w_k: f(&self.w_k),
            w_v: f(&self.w_v),
            w_o: f(&self.w_o),
        }
    }
}

impl<T> FeedForward<T> {
    fn leaves(&self) -> [&T; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }
    fn leaves_mut(&mut self) -> [&mut T; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> FeedForward<U> {
        FeedForward {
            w1: f(&self.w1),
            b1: f(&self.b1),
            w2: f(&self.w2),
            b2: f(&self.b2),
        }
    }
}

impl<T> Norm<T> {
    fn leaves(&self) -> [&T; 2] {
        [&self.gain, &self.bias]
    }
    fn leaves_mut(&mut self) -> [&mut T; 2] {
        [&mut self.gain, &mut self.bias]
    }
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Norm<U> {
        Norm {
            gain: f(&self.gain),
            bias: f(&self.bias),
        }
    }
}

impl<T> Weights<T> {
    /// All leaves in canonical order.
    pub fn leaves(&self) -> Vec<&T> {
        let mut out = vec![&self.embedding];
        for l in &self.encoder {
            out.extend(l.self_norm.leaves());
            out.extend(l.self_attn.leaves());
            out.extend(l.ff_norm.leaves());
            out.extend(l.ff.leaves());
        }
        out.extend(self.encoder_norm.leaves());
        for l in &self.decoder {
            out.extend(l.self_norm.leaves());
            out.extend(l.self_attn.leaves());
            out.extend(l.cross_norm.leaves());
            out.extend(l.cross_attn.leaves());
            out.extend(l.ff_norm.leaves());
            out.extend(l.ff.leaves());
        }
        out.extend(self.decoder_norm.leaves());
        out
    }

    pub fn leaves_mut(&mut self) -> Vec<&mut T> {
        let mut out = vec![&mut self.embedding];
        for l in &mut self.encoder {
            out.extend(l.self_norm.leaves_mut());
            out.extend(l.self_attn.leaves_mut());
            out.extend(l.ff_norm.leaves_mut());
            out.extend(l.ff.leaves_mut());
        }
        out.extend(self.encoder_norm.leaves_mut());
        for l in &mut self.decoder {
            out.extend(l.self_norm.leaves_mut());
            out.extend(l.self_attn.leaves_mut());
            out.extend(l.cross_norm.leaves_mut());
            out.extend(l.cross_attn.leaves_mut());
            out.extend(l.ff_norm.leaves_mut());
            out.extend(l.ff.leaves_mut());
        }
        out.extend(self.decoder_norm.leaves_mut());
        out
    }

    /// Applies `f` to every leaf in canonical order.
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Weights<U> {
        let f = &mut f;
        // Field initialisers run in source order, which matches `leaves`.
        Weights {
            embedding: f(&self.embedding),
            encoder: self
                .encoder
                .iter()
                .map(|l| EncoderLayer {
                    self_norm: l.self_norm.map(f),
                    self_attn: l.self_attn.map(f),
                    ff_norm: l.ff_norm.map(f),
                    ff: l.ff.map(f),
                })
                .collect(),
            encoder_norm: self.encoder_norm.map(f),
            decoder: self
                .decoder
                .iter()
                .map(|l| DecoderLayer {
                    self_norm: l.self_norm.map(f),
                    self_attn: l.self_attn.map(f),
                    cross_norm: l.cross_norm.map(f),
                    cross_attn: l.cross_attn.map(f),
                    ff_norm: l.ff_norm.map(f),
                    ff: l.ff.map(f),
                })
                .collect(),
            decoder_norm: self.decoder_norm.map(f),
        }
    }

    pub fn norms_mut(&mut self) -> Vec<&mut Norm<T>> {
        let mut out = Vec::new();
        for l in &mut self.encoder {
            out.push(&mut l.self_norm);
            out.push(&mut l.ff_norm);
        }
        out.push(&mut self.encoder_norm);
        for l in &mut self.decoder {
            out.push(&mut l.self_norm);
            out.push(&mut l.cross_norm);
            out.push(&mut l.ff_norm);
        }
        out.push(&mut self.decoder_norm);
        out
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves().len()
    }
}

impl<T: Clone> Weights<T> {
    /// Rebuilds a tree with this tree's layout from leaves in canonical order.
    pub fn with_leaves<U: Clone>(&self, leaves: Vec<U>) -> Result<Weights<U>> {
        if leaves.len() != self.num_leaves() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, got {}",
                self.num_leaves(),
                leaves.len()
            )));
        }
        let mut it = leaves.into_iter();
        Ok(self.map(|_| it.next().expect("length checked")))
    }
}

/// Shape of each leaf in canonical order, derived from a config.
pub(crate) fn leaf_shapes(cfg: &ModelConfig) -> Weights<Vec<usize>> {
    let d = cfg.d_model;
    let attn = || AttentionWeights {
        w_q: vec![d, d],
        w_k: vec![d, d],
        w_v: vec![d, d],
        w_o: vec![d, d],
    };
    let norm = || Norm {
        gain: vec![d],
        bias: vec![d],
    };
    let ff = || FeedForward {
        w1: vec![d, cfg.d_ff],
        b1: vec![cfg.d_ff],
        w2: vec![cfg.d_ff, d],
        b2: vec![d],
    };
    Weights {
        embedding: vec![cfg.vocab_size, d],
        encoder: (0..cfg.n_layers_enc)
            .map(|_| EncoderLayer {
                self_norm: norm(),
                self_attn: attn(),
                ff_norm: norm(),
                ff: ff(),
            })
            .collect(),
        encoder_norm: norm(),
        decoder: (0..cfg.n_layers_dec)
            .map(|_| DecoderLayer {
                self_norm: norm(),
                self_attn: attn(),
                cross_norm: norm(),
                cross_attn: attn(),
                ff_norm: norm(),
                ff: ff(),
            })
            .collect(),
        decoder_norm: norm(),
    }
}

impl ModelParams {
    /// Seeded initialisation: matrices uniform in ±sqrt(6 / (fan_in + fan_out)),
    /// norm gains 1, biases 0. All tensors track gradients.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = crate::rng::stream(seed, "init");
        let mut params = leaf_shapes(cfg).map(|shape| {
            let data = match shape.as_slice() {
                [fan_in, fan_out] => {
                    let s = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
                    (0..fan_in * fan_out).map(|_| rng.gen_range(-s..s)).collect()
                }
                _ => vec![0.0; shape.iter().product()],
            };
            Tensor::new(shape.clone(), data).expect("finite init").with_grad()
        });
        for norm in params.norms_mut() {
            norm.gain.data_mut().fill(1.0);
        }
        Ok(params)
    }

    /// Records every parameter as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> ParamVars {
        self.map(|t| g.leaf(t))
    }

    /// Checks every tensor against the shapes implied by `cfg`.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = leaf_shapes(cfg);
        let (ours, theirs) = (self.leaves(), expected.leaves());
        if ours.len() != theirs.len() {
            return Err(Error::invalid(format!(
                "parameter count {} does not match config ({})",
                ours.len(),
                theirs.len()
            )));
        }
        for (i, (t, s)) in ours.iter().zip(theirs).enumerate() {
            if t.shape() != s.as_slice() {
                return Err(Error::invalid(format!(
                    "parameter {i} has shape {:?}, config implies {s:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.leaves().iter().map(|t| t.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in self.leaves_mut() {
            t.zero_grad();
        }
    }
}
