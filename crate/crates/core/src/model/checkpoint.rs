//! Binary checkpoint format.
//!
//! ```text
//! magic        4 bytes   "W2ST"
//! version      u8        1
//! config       7 × u32   d_model, n_heads, n_layers_enc, n_layers_dec,
//!                        d_ff, max_len, vocab_size
//! vocab        u32 byte length, then UTF-8 text: one token per line,
//!                        line number = id
//! tensor count u32
//! tensors      per tensor, in canonical parameter order:
//!                u32 rank, rank × u32 dims, then dims.product() × f32
//! ```
//!
//! All integers and floats are little-endian. Nothing may follow the last
//! tensor.

use std::path::Path;

use super::params::leaf_shapes;
use super::{ModelConfig, ModelParams};
use crate::numerics::Tensor;
use crate::tokenizer::Vocab;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"W2ST";
pub const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ModelParams,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn to_bytes(config: &ModelConfig, vocab: &Vocab, params: &ModelParams) -> Result<Vec<u8>> {
    if vocab.len() != config.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocab has {} tokens but config says {}",
            vocab.len(),
            config.vocab_size
        )));
    }
    params.check_shapes(config)?;
    let mut out = Vec::with_capacity(64 + params.num_scalars() * 4);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for v in [
        config.d_model,
        config.n_heads,
        config.n_layers_enc,
        config.n_layers_dec,
        config.d_ff,
        config.max_len,
        config.vocab_size,
    ] {
        put_u32(&mut out, v)?;
    }
    let text = vocab.to_text();
    put_u32(&mut out, text.len())?;
    out.extend_from_slice(text.as_bytes());
    let leaves = params.leaves();
    put_u32(&mut out, leaves.len())?;
    for t in leaves {
        put_u32(&mut out, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.take(1)?[0];
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let config = ModelConfig {
        d_model: r.u32()?,
        n_heads: r.u32()?,
        n_layers_enc: r.u32()?,
        n_layers_dec: r.u32()?,
        d_ff: r.u32()?,
        max_len: r.u32()?,
        vocab_size: r.u32()?,
    };
    config.validate()?;
    let vlen = r.u32()?;
    let text = std::str::from_utf8(r.take(vlen)?)
        .map_err(|e| Error::Checkpoint(format!("vocab block is not UTF-8: {e}")))?;
    let vocab = Vocab::from_text(text)?;
    if vocab.len() != config.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocab block has {} tokens, config says {}",
            vocab.len(),
            config.vocab_size
        )));
    }
    let layout = leaf_shapes(&config);
    let count = r.u32()?;
    if count != layout.num_leaves() {
        return Err(Error::Checkpoint(format!(
            "{count} tensors stored, config implies {}",
            layout.num_leaves()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for expected in layout.leaves() {
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if &shape != expected {
            return Err(Error::Checkpoint(format!(
                "tensor {} has shape {shape:?}, expected {expected:?}",
                tensors.len()
            )));
        }
        let n: usize = shape.iter().product();
        let data = r
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::new(shape, data)?.with_grad());
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            buf.len() - r.pos
        )));
    }
    let params = layout.with_leaves(tensors)?;
    Ok(Checkpoint {
        config,
        vocab,
        params,
    })
}

pub fn save(path: impl AsRef<Path>, config: &ModelConfig, vocab: &Vocab, params: &ModelParams) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(config, vocab, params)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
