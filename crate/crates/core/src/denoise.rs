//! Denoising pretraining pairs: each token is independently replaced by the
//! mask token, adjacent masked tokens collapse into one mask, and the target
//! is the untouched sequence followed by end-of-sequence.

use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::corpus::PackedDocument;
use crate::error::{Error, Result};
use crate::rng::{mix_seed, Xoshiro256};
use crate::unigram::{TokenSequence, UnigramVocab, EOS_ID, MASK_ID, PAD_ID};

pub const CACHE_MAGIC: &[u8; 4] = b"DNPZ";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionConfig {
    pub mask_rate: f64,
    pub max_len: usize,
    pub seed: u64,
    /// Collapse each run of masked tokens into a single mask id.
    pub collapse_runs: bool,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            mask_rate: 0.15,
            max_len: 512,
            seed: 0,
            collapse_runs: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenoisePair {
    pub input_ids: TokenSequence,
    pub target_ids: TokenSequence,
    pub seed: u64,
}

/// Bernoulli(`rate`) draw per position from a stream seeded with `seed`.
pub fn draw_mask(len: usize, rate: f64, seed: u64) -> Vec<bool> {
    let mut rng = Xoshiro256::seed_from_u64(seed);
    (0..len).map(|_| rng.bernoulli(rate)).collect()
}

/// Replaces masked positions with the mask id, collapsing runs when asked.
pub fn apply_mask(ids: &[u32], mask: &[bool], collapse_runs: bool) -> TokenSequence {
    let mut out = Vec::with_capacity(ids.len());
    for (i, (&id, &m)) in ids.iter().zip(mask).enumerate() {
        if !m {
            out.push(id);
        } else if !(collapse_runs && i > 0 && mask[i - 1]) {
            out.push(MASK_ID);
        }
    }
    out
}

pub fn mask_tokens(ids: &[u32], cfg: &CorruptionConfig, seed: u64) -> Result<DenoisePair> {
    if !(cfg.mask_rate >= 0.0 && cfg.mask_rate < 1.0) {
        return Err(Error::invalid(format!("mask rate {} outside [0, 1)", cfg.mask_rate)));
    }
    if ids.iter().any(|&id| UnigramVocab::is_reserved(id)) {
        return Err(Error::invalid("source sequence contains control ids"));
    }
    if ids.is_empty() {
        return Ok(DenoisePair {
            input_ids: Vec::new(),
            target_ids: Vec::new(),
            seed,
        });
    }
    let mask = draw_mask(ids.len(), cfg.mask_rate, seed);
    let mut target_ids = ids.to_vec();
    target_ids.push(EOS_ID);
    Ok(DenoisePair {
        input_ids: apply_mask(ids, &mask, cfg.collapse_runs),
        target_ids,
        seed,
    })
}

fn pad_to(ids: &mut Vec<u32>, len: usize) {
    ids.resize(len.max(ids.len()), PAD_ID);
}

/// Encodes, truncates, corrupts and right-pads every document. Example `i`
/// uses the seed `mix_seed(cfg.seed, i)`, so output does not depend on
/// processing order.
pub fn make_pretrain_batch(
    docs: &[PackedDocument],
    vocab: &UnigramVocab,
    cfg: &CorruptionConfig,
) -> Result<Vec<DenoisePair>> {
    if cfg.max_len < 2 {
        return Err(Error::invalid("max_len must leave room for end-of-sequence"));
    }
    docs.iter()
        .enumerate()
        .map(|(i, doc)| {
            let mut ids = vocab.encode(&doc.text());
            ids.truncate(cfg.max_len - 1);
            let mut pair = mask_tokens(&ids, cfg, mix_seed(cfg.seed, i as u64))?;
            pad_to(&mut pair.input_ids, cfg.max_len);
            pad_to(&mut pair.target_ids, cfg.max_len);
            Ok(pair)
        })
        .collect()
}

pub fn encode_cache(pairs: &[DenoisePair], max_len: u32) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(CACHE_MAGIC);
    w.u32(CACHE_VERSION);
    w.u32(max_len);
    w.u64(pairs.len() as u64);
    for p in pairs {
        for ids in [&p.input_ids, &p.target_ids] {
            w.u32(ids.len() as u32);
            ids.iter().for_each(|&id| w.u32(id));
        }
    }
    w.buf
}

/// Decodes a cache file into `(max_len, pairs)`. Seeds are not stored and
/// come back as zero.
pub fn decode_cache(data: &[u8]) -> Result<(u32, Vec<DenoisePair>)> {
    let mut r = Reader::new(data);
    if r.take(4)? != CACHE_MAGIC {
        return Err(Error::Format("not a denoising cache (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(Error::Format(format!("unsupported cache version {version}")));
    }
    let max_len = r.u32()?;
    let count = r.u64()?;
    let mut pairs = Vec::new();
    for _ in 0..count {
        let mut read_ids = || -> Result<Vec<u32>> {
            let n = r.u32()? as usize;
            (0..n).map(|_| r.u32()).collect()
        };
        let input_ids = read_ids()?;
        let target_ids = read_ids()?;
        pairs.push(DenoisePair {
            input_ids,
            target_ids,
            seed: 0,
        });
    }
    if !r.is_done() {
        return Err(Error::Format("trailing bytes after cache".into()));
    }
    Ok((max_len, pairs))
}

pub fn save_cache(path: &Path, pairs: &[DenoisePair], max_len: u32) -> Result<()> {
    std::fs::write(path, encode_cache(pairs, max_len)).map_err(|e| Error::io(path.display(), e))
}

pub fn load_cache(path: &Path) -> Result<(u32, Vec<DenoisePair>)> {
    let data = std::fs::read(path).map_err(|e| Error::io(path.display(), e))?;
    decode_cache(&data)
}
