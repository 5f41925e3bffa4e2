use super::{AttentionWeights, FeedForward, ModelConfig, ModelParams, Norm, ParamVars};
use crate::numerics::{Graph, Tensor, Var};
use crate::tokenizer::{TokenId, TokenSeq, BOS, EOS, PAD};
use crate::{Error, Result};

const LN_EPS: f32 = 1e-5;

/// Boolean attention mask, `true` where a query may attend to a key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
}

impl AttentionMask {
    pub fn new(rows: usize, cols: usize, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != rows * cols {
            return Err(Error::Shape {
                op: "attention mask",
                lhs: vec![rows, cols],
                rhs: vec![keep.len()],
            });
        }
        Ok(AttentionMask { rows, cols, keep })
    }

    /// Position `t` sees keys `0..=t`.
    pub fn causal(n: usize) -> Self {
        let keep = (0..n).flat_map(|r| (0..n).map(move |c| c <= r)).collect();
        AttentionMask { rows: n, cols: n, keep }
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }
}

/// Row-stochastic weights `softmax(q·kᵀ / sqrt(d_k))`, masked entries zero.
pub fn attention_weights(g: &mut Graph, q: Var, k: Var, mask: Option<&AttentionMask>) -> Result<Var> {
    let (qs, ks) = (g.shape(q).to_vec(), g.shape(k).to_vec());
    if qs.len() != 2 || ks.len() != 2 || qs[1] != ks[1] {
        return Err(Error::Shape {
            op: "attention",
            lhs: qs,
            rhs: ks,
        });
    }
    let scores = g.matmul_nt(q, k)?;
    let scores = g.scale(scores, 1.0 / (qs[1] as f32).sqrt())?;
    match mask {
        None => g.softmax(scores, 1),
        Some(m) => {
            if m.rows != qs[0] || m.cols != ks[0] {
                return Err(Error::Shape {
                    op: "attention mask",
                    lhs: vec![qs[0], ks[0]],
                    rhs: vec![m.rows, m.cols],
                });
            }
            g.masked_softmax(scores, &m.keep)
        }
    }
}

/// Scaled dot-product attention for one head.
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var, mask: Option<&AttentionMask>) -> Result<Var> {
    if g.shape(v).len() != 2 || g.shape(v)[0] != g.shape(k)[0] {
        return Err(Error::Shape {
            op: "attention",
            lhs: g.shape(k).to_vec(),
            rhs: g.shape(v).to_vec(),
        });
    }
    let w = attention_weights(g, q, k, mask)?;
    g.matmul(w, v)
}

fn multi_head(
    g: &mut Graph,
    w: &AttentionWeights<Var>,
    cfg: &ModelConfig,
    x_q: Var,
    x_kv: Var,
    mask: Option<&AttentionMask>,
) -> Result<Var> {
    let q = g.matmul(x_q, w.w_q)?;
    let k = g.matmul(x_kv, w.w_k)?;
    let v = g.matmul(x_kv, w.w_v)?;
    let dk = cfg.d_k();
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let qh = g.slice_cols(q, h * dk, dk)?;
        let kh = g.slice_cols(k, h * dk, dk)?;
        let vh = g.slice_cols(v, h * dk, dk)?;
        heads.push(attention(g, qh, kh, vh, mask)?);
    }
    let joined = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_cols(&heads)?
    };
    g.matmul(joined, w.w_o)
}

fn feed_forward(g: &mut Graph, w: &FeedForward<Var>, x: Var) -> Result<Var> {
    let h = g.matmul(x, w.w1)?;
    let h = g.add_row(h, w.b1)?;
    let h = g.relu(h)?;
    let o = g.matmul(h, w.w2)?;
    g.add_row(o, w.b2)
}

fn norm(g: &mut Graph, w: &Norm<Var>, x: Var) -> Result<Var> {
    g.layer_norm(x, w.gain, w.bias, LN_EPS)
}

/// `PE[p, 2i] = sin(p / 10000^(2i/d))`, `PE[p, 2i+1] = cos(...)`.
pub(crate) fn sinusoidal_positions(n: usize, d: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; n * d];
    for p in 0..n {
        for i in 0..d {
            let pair = (i / 2 * 2) as f64;
            let angle = p as f64 / 10000f64.powf(pair / d as f64);
            out[p * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() } as f32;
        }
    }
    out
}

fn check_len(what: &str, len: usize, cfg: &ModelConfig) -> Result<()> {
    if len == 0 || len > cfg.max_len {
        return Err(Error::invalid(format!(
            "{what} length {len} outside 1..={}",
            cfg.max_len
        )));
    }
    Ok(())
}

fn embed(g: &mut Graph, w: &ParamVars, cfg: &ModelConfig, ids: &[TokenId]) -> Result<Var> {
    let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    let x = g.gather_rows(w.embedding, &idx)?;
    let x = g.scale(x, (cfg.d_model as f32).sqrt())?;
    let pe = g.constant([ids.len(), cfg.d_model], sinusoidal_positions(ids.len(), cfg.d_model))?;
    g.add(x, pe)
}

/// Encoder stack on `ids`; returns hidden states `[len × d_model]`.
pub fn encode_in(g: &mut Graph, w: &ParamVars, cfg: &ModelConfig, ids: &[TokenId]) -> Result<Var> {
    check_len("instruction", ids.len(), cfg)?;
    let mut x = embed(g, w, cfg, ids)?;
    for layer in &w.encoder {
        let h = norm(g, &layer.self_norm, x)?;
        let a = multi_head(g, &layer.self_attn, cfg, h, h, None)?;
        x = g.add(x, a)?;
        let h = norm(g, &layer.ff_norm, x)?;
        let f = feed_forward(g, &layer.ff, h)?;
        x = g.add(x, f)?;
    }
    norm(g, &w.encoder_norm, x)
}

/// Decoder stack over `prefix` attending to `enc`; row `t` of the result
/// holds the logits for the token following `prefix[t]`.
pub fn decode_logits_in(
    g: &mut Graph,
    w: &ParamVars,
    cfg: &ModelConfig,
    enc: Var,
    prefix: &[TokenId],
) -> Result<Var> {
    check_len("decoder prefix", prefix.len(), cfg)?;
    let mask = AttentionMask::causal(prefix.len());
    let mut x = embed(g, w, cfg, prefix)?;
    for layer in &w.decoder {
        let h = norm(g, &layer.self_norm, x)?;
        let a = multi_head(g, &layer.self_attn, cfg, h, h, Some(&mask))?;
        x = g.add(x, a)?;
        let h = norm(g, &layer.cross_norm, x)?;
        let c = multi_head(g, &layer.cross_attn, cfg, h, enc, None)?;
        x = g.add(x, c)?;
        let h = norm(g, &layer.ff_norm, x)?;
        let f = feed_forward(g, &layer.ff, h)?;
        x = g.add(x, f)?;
    }
    let x = norm(g, &w.decoder_norm, x)?;
    // The tied projection is rescaled by 1/sqrt(d_model) so that untrained
    // logits have variance ~1/d_model and the initial loss sits at ln |V|.
    let x = g.scale(x, 1.0 / (cfg.d_model as f32).sqrt())?;
    g.matmul_nt(x, w.embedding)
}

/// Teacher-forced mean token NLL of `story` given `instruction`. The
/// decoder reads `BOS + story[..m-1]` and is scored against `story`.
pub fn sequence_loss_in(
    g: &mut Graph,
    w: &ParamVars,
    cfg: &ModelConfig,
    instruction: &[TokenId],
    story: &[TokenId],
) -> Result<Var> {
    let logits = teacher_forced_logits(g, w, cfg, instruction, story)?;
    g.cross_entropy(logits, story, PAD)
}

pub(crate) fn teacher_forced_logits(
    g: &mut Graph,
    w: &ParamVars,
    cfg: &ModelConfig,
    instruction: &[TokenId],
    story: &[TokenId],
) -> Result<Var> {
    if story.is_empty() {
        return Err(Error::invalid("sequence_loss: empty story"));
    }
    if story.last() != Some(&EOS) {
        return Err(Error::invalid("sequence_loss: story must end with EOS"));
    }
    check_len("story", story.len(), cfg)?;
    let enc = encode_in(g, w, cfg, instruction)?;
    let mut input = Vec::with_capacity(story.len());
    input.push(BOS);
    input.extend_from_slice(&story[..story.len() - 1]);
    decode_logits_in(g, w, cfg, enc, &input)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderStates {
    pub hidden: Tensor,
}

/// Encodes an instruction outside of any training graph.
pub fn encode(params: &ModelParams, cfg: &ModelConfig, instruction: &TokenSeq) -> Result<EncoderStates> {
    let mut g = Graph::new();
    let w = params.bind(&mut g);
    let h = encode_in(&mut g, &w, cfg, &instruction.ids)?;
    Ok(EncoderStates { hidden: g.tensor(h) })
}

pub fn decode_logits(
    params: &ModelParams,
    cfg: &ModelConfig,
    enc: &EncoderStates,
    story_prefix: &TokenSeq,
) -> Result<Tensor> {
    if enc.hidden.shape().len() != 2 || enc.hidden.cols() != cfg.d_model {
        return Err(Error::Shape {
            op: "decode_logits",
            lhs: enc.hidden.shape().to_vec(),
            rhs: vec![cfg.d_model],
        });
    }
    let mut g = Graph::new();
    let w = params.bind(&mut g);
    let mut hidden = enc.hidden.clone();
    hidden.set_requires_grad(false);
    let e = g.leaf(&hidden);
    let logits = decode_logits_in(&mut g, &w, cfg, e, &story_prefix.ids)?;
    Ok(g.tensor(logits))
}

/// Value of [`sequence_loss_in`] without keeping the graph.
pub fn sequence_loss(params: &ModelParams, cfg: &ModelConfig, instruction: &TokenSeq, story: &TokenSeq) -> Result<f32> {
    let mut g = Graph::new();
    let w = params.bind(&mut g);
    let l = sequence_loss_in(&mut g, &w, cfg, &instruction.ids, &story.ids)?;
    g.scalar(l)
}
