//! `SQFG` tensor container: model configuration plus named f32 tensors.
//!
//! Layout (little-endian): magic `SQFG`, version u32, config block, tensor
//! count u32, then per tensor a u16-length UTF-8 name, rank u8, u32 dims
//! and row-major f32 data. The config block is vocab_size, d_model,
//! n_heads, d_ff, n_enc_layers, n_dec_layers, max_len (u32 each), position
//! scheme u8 (0 absolute, 1 relative buckets), num_buckets u32,
//! max_distance u32, tie_embeddings u8 and the decoder start id u32.

use std::path::Path;

use super::params::{ModelConfig, ParamStore, PositionScheme, Tensor};
use super::transformer::{Seq2Seq, DECODER_START_ID};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SQFG";
const VERSION: u32 = 1;
/// Name prefix of optimizer state tensors stored next to the model.
pub const OPT_PREFIX: &str = "opt/";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Model tensors followed by any `opt/` tensors.
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_model(model: &Seq2Seq, optimizer_state: Vec<Tensor>) -> Self {
        let mut tensors = model.params().tensors().to_vec();
        tensors.extend(optimizer_state.into_iter().map(|mut t| {
            if !t.name.starts_with(OPT_PREFIX) {
                t.name = format!("{OPT_PREFIX}{}", t.name);
            }
            t
        }));
        Self {
            config: model.config().clone(),
            tensors,
        }
    }

    /// Splits into the model and the optimizer tensors (prefix kept).
    pub fn into_model(self) -> Result<(Seq2Seq, Vec<Tensor>)> {
        let (opt, model): (Vec<Tensor>, Vec<Tensor>) =
            self.tensors.into_iter().partition(|t| t.name.starts_with(OPT_PREFIX));
        let mut store = ParamStore::default();
        for t in model {
            store.push(t);
        }
        Ok((Seq2Seq::from_params(self.config, store)?, opt))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let c = &self.config;
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        for v in [c.vocab_size, c.d_model, c.n_heads, c.d_ff, c.n_enc_layers, c.n_dec_layers, c.max_len] {
            w.u32(to_u32(v)?);
        }
        match c.position_scheme {
            PositionScheme::LearnedAbsolute => {
                w.u8(0);
                w.u32(0);
                w.u32(0);
            }
            PositionScheme::RelativeBucket { num_buckets, max_distance } => {
                w.u8(1);
                w.u32(to_u32(num_buckets)?);
                w.u32(to_u32(max_distance)?);
            }
        }
        w.u8(c.tie_embeddings as u8);
        w.u32(DECODER_START_ID);
        w.u32(to_u32(self.tensors.len())?);
        for t in &self.tensors {
            let name = t.name.as_bytes();
            let len = u16::try_from(name.len()).map_err(|_| Error::invalid(format!("tensor name too long: {}", t.name)))?;
            w.u16(len);
            w.bytes(name);
            w.u8(t.shape.len() as u8);
            for &d in &t.shape {
                w.u32(to_u32(d)?);
            }
            for &v in &t.data {
                w.f32(v as f32);
            }
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not an SQFG checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut dims = [0usize; 7];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let scheme = r.u8()?;
        let (nb, md) = (r.u32()? as usize, r.u32()? as usize);
        let position_scheme = match scheme {
            0 => PositionScheme::LearnedAbsolute,
            1 => PositionScheme::RelativeBucket {
                num_buckets: nb,
                max_distance: md,
            },
            s => return Err(Error::Format(format!("unknown position scheme {s}"))),
        };
        let tie_embeddings = r.u8()? != 0;
        let start = r.u32()?;
        if start != DECODER_START_ID {
            return Err(Error::IncompatibleCheckpoint(format!("decoder start id {start}")));
        }
        let config = ModelConfig {
            vocab_size: dims[0],
            d_model: dims[1],
            n_heads: dims[2],
            d_ff: dims[3],
            n_enc_layers: dims[4],
            n_dec_layers: dims[5],
            max_len: dims[6],
            position_scheme,
            tie_embeddings,
        };
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("tensor {name} too large")))?;
            if n.checked_mul(4).is_none_or(|b| b > bytes.len()) {
                return Err(Error::Format(format!("tensor {name} exceeds the file size")));
            }
            let data = (0..n).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
            tensors.push(Tensor::new(name, shape, data));
        }
        if !r.is_done() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path.display(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display(), e))?;
        Self::from_bytes(&bytes)
    }
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("value {v} does not fit in u32")))
}

/// Rounds every parameter to the nearest f32 so the in-memory model equals
/// what a checkpoint stores.
pub fn round_to_f32(params: &mut ParamStore) {
    for t in params.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}
