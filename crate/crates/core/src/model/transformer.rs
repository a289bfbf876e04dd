//! Pre-normalization encoder-decoder transformer over the tape in
//! [`graph`](super::graph).

use std::rc::Rc;

use super::graph::{log_softmax, Graph, Mat, NodeId};
use super::params::{ModelConfig, ParamStore, PositionScheme, Tensor, TrainableMask, EMBEDDING};
use crate::error::{Error, Result};
use crate::rng::Xoshiro256;
use crate::unigram::{EOS_ID, PAD_ID};

/// Decoding starts from the end-of-sequence id.
pub const DECODER_START_ID: u32 = EOS_ID;

/// Per-parameter gradients, `None` for frozen tensors.
pub type Gradients = Vec<Option<Vec<f64>>>;

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Teacher-forced output sequence, typically ending in end-of-sequence.
    Sequence(Vec<u32>),
    /// Similarity score in [1, 5] for the regression head.
    Score(f64),
    /// Class index for the two-way classification head.
    Class(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Vec<u32>,
    pub target: Target,
}

#[derive(Clone, Copy)]
enum Init {
    Normal(f64),
    Uniform(f64),
    Ones,
    Zeros,
}

struct Attn {
    q: usize,
    k: usize,
    v: usize,
    o: usize,
}

struct EncLayer {
    attn_norm: usize,
    attn: Attn,
    ffn_norm: usize,
    wi: usize,
    wo: usize,
}

struct DecLayer {
    self_norm: usize,
    self_attn: Attn,
    cross_norm: usize,
    cross_attn: Attn,
    ffn_norm: usize,
    wi: usize,
    wo: usize,
}

struct Layout {
    emb: usize,
    enc_pos: Option<usize>,
    dec_pos: Option<usize>,
    enc_rel: Option<usize>,
    dec_rel: Option<usize>,
    enc: Vec<EncLayer>,
    dec: Vec<DecLayer>,
    enc_final: usize,
    dec_final: usize,
    lm_head: Option<usize>,
    reg_w: usize,
    reg_b: usize,
    cls_w: usize,
    cls_b: usize,
}

fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.d_model;
    let ff = cfg.d_ff;
    let v = cfg.vocab_size;
    let emb_std = (1.0 / d as f64).sqrt();
    let proj = |fan_in: usize| Init::Uniform((1.0 / fan_in as f64).sqrt());
    let mut specs: Vec<(String, Vec<usize>, Init)> = vec![(EMBEDDING.into(), vec![v, d], Init::Normal(emb_std))];
    let attn = |specs: &mut Vec<_>, prefix: &str| {
        for m in ["q", "k", "v", "o"] {
            specs.push((format!("{prefix}.{m}"), vec![d, d], proj(d)));
        }
    };
    for (stack, n_layers) in [("enc", cfg.n_enc_layers), ("dec", cfg.n_dec_layers)] {
        match cfg.position_scheme {
            PositionScheme::LearnedAbsolute => {
                specs.push((format!("{stack}.pos"), vec![cfg.max_len, d], Init::Normal(emb_std)));
            }
            PositionScheme::RelativeBucket { num_buckets, .. } => {
                specs.push((format!("{stack}.rel_bias"), vec![num_buckets, cfg.n_heads], Init::Normal(0.1)));
            }
        }
        for l in 0..n_layers {
            if stack == "enc" {
                specs.push((format!("enc.{l}.attn_norm"), vec![d], Init::Ones));
                attn(&mut specs, &format!("enc.{l}.attn"));
            } else {
                specs.push((format!("dec.{l}.self_norm"), vec![d], Init::Ones));
                attn(&mut specs, &format!("dec.{l}.self"));
                specs.push((format!("dec.{l}.cross_norm"), vec![d], Init::Ones));
                attn(&mut specs, &format!("dec.{l}.cross"));
            }
            specs.push((format!("{stack}.{l}.ffn_norm"), vec![d], Init::Ones));
            specs.push((format!("{stack}.{l}.ffn.wi"), vec![d, ff], proj(d)));
            specs.push((format!("{stack}.{l}.ffn.wo"), vec![ff, d], proj(ff)));
        }
        specs.push((format!("{stack}.final_norm"), vec![d], Init::Ones));
    }
    if !cfg.tie_embeddings {
        specs.push(("lm_head".into(), vec![d, v], proj(d)));
    }
    specs.push(("head.reg.w".into(), vec![d, 1], proj(d)));
    specs.push(("head.reg.b".into(), vec![1], Init::Zeros));
    specs.push(("head.cls.w".into(), vec![d, 2], proj(d)));
    specs.push(("head.cls.b".into(), vec![2], Init::Zeros));
    specs
}

/// Number of scalar parameters a configuration implies.
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    param_specs(cfg).iter().map(|(_, s, _)| s.iter().product::<usize>()).sum()
}

impl Layout {
    fn resolve(cfg: &ModelConfig, params: &ParamStore) -> Result<Self> {
        let specs = param_specs(cfg);
        if specs.len() != params.len() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "expected {} tensors, found {}",
                specs.len(),
                params.len()
            )));
        }
        for (name, shape, _) in &specs {
            let t = params
                .get(name)
                .ok_or_else(|| Error::IncompatibleCheckpoint(format!("missing tensor {name}")))?;
            if &t.shape != shape {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
        }
        let ix = |n: &str| params.index_of(n).expect("checked above");
        let attn = |p: &str| Attn {
            q: ix(&format!("{p}.q")),
            k: ix(&format!("{p}.k")),
            v: ix(&format!("{p}.v")),
            o: ix(&format!("{p}.o")),
        };
        Ok(Self {
            emb: ix(EMBEDDING),
            enc_pos: params.index_of("enc.pos"),
            dec_pos: params.index_of("dec.pos"),
            enc_rel: params.index_of("enc.rel_bias"),
            dec_rel: params.index_of("dec.rel_bias"),
            enc: (0..cfg.n_enc_layers)
                .map(|l| EncLayer {
                    attn_norm: ix(&format!("enc.{l}.attn_norm")),
                    attn: attn(&format!("enc.{l}.attn")),
                    ffn_norm: ix(&format!("enc.{l}.ffn_norm")),
                    wi: ix(&format!("enc.{l}.ffn.wi")),
                    wo: ix(&format!("enc.{l}.ffn.wo")),
                })
                .collect(),
            dec: (0..cfg.n_dec_layers)
                .map(|l| DecLayer {
                    self_norm: ix(&format!("dec.{l}.self_norm")),
                    self_attn: attn(&format!("dec.{l}.self")),
                    cross_norm: ix(&format!("dec.{l}.cross_norm")),
                    cross_attn: attn(&format!("dec.{l}.cross")),
                    ffn_norm: ix(&format!("dec.{l}.ffn_norm")),
                    wi: ix(&format!("dec.{l}.ffn.wi")),
                    wo: ix(&format!("dec.{l}.ffn.wo")),
                })
                .collect(),
            enc_final: ix("enc.final_norm"),
            dec_final: ix("dec.final_norm"),
            lm_head: params.index_of("lm_head"),
            reg_w: ix("head.reg.w"),
            reg_b: ix("head.reg.b"),
            cls_w: ix("head.cls.w"),
            cls_b: ix("head.cls.b"),
        })
    }
}

/// T5-style relative position bucket for `key - query`.
pub fn relative_bucket(relative: i64, bidirectional: bool, num_buckets: usize, max_distance: usize) -> usize {
    let mut buckets = num_buckets as i64;
    let mut ret = 0i64;
    let mut n = -relative;
    if bidirectional {
        buckets /= 2;
        if n < 0 {
            ret += buckets;
        }
        n = n.abs();
    } else {
        n = n.max(0);
    }
    let max_exact = buckets / 2;
    if n < max_exact {
        return (ret + n) as usize;
    }
    let scaled = (n as f64 / max_exact as f64).ln() / (max_distance as f64 / max_exact as f64).ln()
        * (buckets - max_exact) as f64;
    (ret + (max_exact + scaled as i64).min(buckets - 1)) as usize
}

/// Encoder output kept around for incremental decoding.
pub struct EncodedInput {
    states: Mat,
    key_allowed: Vec<bool>,
}

impl EncodedInput {
    pub fn states(&self) -> &Mat {
        &self.states
    }
}

/// Small encoder-decoder transformer with pooled regression and
/// classification heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2Seq {
    cfg: ModelConfig,
    params: ParamStore,
}

impl Seq2Seq {
    /// Deterministic initialization: embeddings ~ N(0, 1/d_model),
    /// projections uniform in ±1/sqrt(fan_in), normalization gains 1.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Xoshiro256::seed_from_u64(seed);
        let mut params = ParamStore::default();
        for (name, shape, init) in param_specs(cfg) {
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| match init {
                    Init::Normal(std) => std * rng.normal(),
                    Init::Uniform(b) => rng.uniform(-b, b),
                    Init::Ones => 1.0,
                    Init::Zeros => 0.0,
                })
                .collect();
            params.push(Tensor::new(name, shape, data));
        }
        Ok(Self { cfg: cfg.clone(), params })
    }

    pub fn from_params(cfg: ModelConfig, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        Layout::resolve(&cfg, &params)?;
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn layout(&self) -> Layout {
        Layout::resolve(&self.cfg, &self.params).expect("parameters match the configuration")
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.len() > self.cfg.max_len {
            return Err(Error::LengthOverflow {
                len: ids.len(),
                max: self.cfg.max_len,
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= self.cfg.vocab_size) {
            return Err(Error::IdOutOfRange {
                id,
                vocab_size: self.cfg.vocab_size,
            });
        }
        Ok(())
    }

    fn rel_buckets(&self, q_len: usize, k_len: usize, bidirectional: bool) -> Option<Rc<[usize]>> {
        let PositionScheme::RelativeBucket { num_buckets, max_distance } = self.cfg.position_scheme else {
            return None;
        };
        let mut b = Vec::with_capacity(q_len * k_len);
        for i in 0..q_len {
            for j in 0..k_len {
                b.push(relative_bucket(j as i64 - i as i64, bidirectional, num_buckets, max_distance));
            }
        }
        Some(b.into())
    }

    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        g: &mut Graph,
        xq: NodeId,
        xkv: NodeId,
        w: &Attn,
        allowed: &Rc<[bool]>,
        bias: Option<(usize, &Rc<[usize]>)>,
    ) -> NodeId {
        let dh = self.cfg.head_dim();
        let (wq, wk, wv, wo) = (g.param(w.q), g.param(w.k), g.param(w.v), g.param(w.o));
        let q = g.matmul(xq, wq);
        let k = g.matmul(xkv, wk);
        let v = g.matmul(xkv, wv);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.cfg.n_heads);
        for h in 0..self.cfg.n_heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let s = g.matmul_bt(qh, kh);
            let mut s = g.scale(s, scale);
            if let Some((table, buckets)) = bias {
                let t = g.param(table);
                s = g.add_bias(s, t, buckets.clone(), h);
            }
            let p = g.softmax(s, Some(allowed.clone()));
            heads.push(g.matmul(p, vh));
        }
        let cat = g.concat_cols(heads);
        g.matmul(cat, wo)
    }

    fn ffn(&self, g: &mut Graph, x: NodeId, wi: usize, wo: usize) -> NodeId {
        let (wi, wo) = (g.param(wi), g.param(wo));
        let h = g.matmul(x, wi);
        let h = g.gelu(h);
        g.matmul(h, wo)
    }

    fn embed(&self, g: &mut Graph, lay: &Layout, ids: &[u32], pos: Option<usize>) -> NodeId {
        let emb = g.param(lay.emb);
        let x = g.gather(emb, ids.iter().map(|&i| i as usize).collect());
        match pos {
            Some(p) => {
                let table = g.param(p);
                let pe = g.gather(table, (0..ids.len()).collect());
                g.add(x, pe)
            }
            None => x,
        }
    }

    /// Final encoder states and the key mask (true for non-padding).
    fn build_encoder(&self, g: &mut Graph, lay: &Layout, enc_ids: &[u32]) -> (NodeId, Vec<bool>) {
        let n = enc_ids.len();
        let keys: Vec<bool> = enc_ids.iter().map(|&id| id != PAD_ID).collect();
        let allowed: Rc<[bool]> = (0..n * n).map(|i| keys[i % n]).collect();
        let buckets = self.rel_buckets(n, n, true);
        let bias = lay.enc_rel.zip(buckets.as_ref());
        let mut x = self.embed(g, lay, enc_ids, lay.enc_pos);
        for layer in &lay.enc {
            let gain = g.param(layer.attn_norm);
            let h = g.rms_norm(x, gain);
            let a = self.attention(g, h, h, &layer.attn, &allowed, bias);
            x = g.add(x, a);
            let gain = g.param(layer.ffn_norm);
            let h = g.rms_norm(x, gain);
            let f = self.ffn(g, h, layer.wi, layer.wo);
            x = g.add(x, f);
        }
        let gain = g.param(lay.enc_final);
        (g.rms_norm(x, gain), keys)
    }

    fn build_decoder(&self, g: &mut Graph, lay: &Layout, enc_out: NodeId, enc_keys: &[bool], dec_ids: &[u32]) -> NodeId {
        let m = dec_ids.len();
        let n = enc_keys.len();
        let causal: Rc<[bool]> = (0..m * m).map(|i| i % m <= i / m).collect();
        let cross: Rc<[bool]> = (0..m * n).map(|i| enc_keys[i % n.max(1)]).collect();
        let buckets = self.rel_buckets(m, m, false);
        let bias = lay.dec_rel.zip(buckets.as_ref());
        let mut y = self.embed(g, lay, dec_ids, lay.dec_pos);
        for layer in &lay.dec {
            let gain = g.param(layer.self_norm);
            let h = g.rms_norm(y, gain);
            let a = self.attention(g, h, h, &layer.self_attn, &causal, bias);
            y = g.add(y, a);
            let gain = g.param(layer.cross_norm);
            let h = g.rms_norm(y, gain);
            let a = self.attention(g, h, enc_out, &layer.cross_attn, &cross, None);
            y = g.add(y, a);
            let gain = g.param(layer.ffn_norm);
            let h = g.rms_norm(y, gain);
            let f = self.ffn(g, h, layer.wi, layer.wo);
            y = g.add(y, f);
        }
        let gain = g.param(lay.dec_final);
        let y = g.rms_norm(y, gain);
        match lay.lm_head {
            Some(w) => {
                let w = g.param(w);
                g.matmul(y, w)
            }
            None => {
                let emb = g.param(lay.emb);
                g.matmul_bt(y, emb)
            }
        }
    }

    /// Teacher-forced next-token logits, one row per decoder position.
    pub fn forward(&self, enc_ids: &[u32], dec_ids: &[u32]) -> Result<Mat> {
        self.check_ids(enc_ids)?;
        self.check_ids(dec_ids)?;
        let lay = self.layout();
        let mut g = Graph::new(&self.params, None);
        let (enc, keys) = self.build_encoder(&mut g, &lay, enc_ids);
        let logits = self.build_decoder(&mut g, &lay, enc, &keys, dec_ids);
        Ok(g.value(logits).clone())
    }

    /// Final encoder states, `[len × d_model]`.
    pub fn encoder_states(&self, enc_ids: &[u32]) -> Result<Mat> {
        self.check_ids(enc_ids)?;
        let lay = self.layout();
        let mut g = Graph::new(&self.params, None);
        let (enc, _) = self.build_encoder(&mut g, &lay, enc_ids);
        Ok(g.value(enc).clone())
    }

    /// Mean of the final encoder states over non-padding positions.
    pub fn encoder_mean_pool(&self, enc_ids: &[u32]) -> Result<Vec<f64>> {
        let rows = non_pad_rows(enc_ids)?;
        let states = self.encoder_states(enc_ids)?;
        let mut pool = vec![0.0; states.cols];
        for &r in &rows {
            pool.iter_mut().zip(states.row(r)).for_each(|(p, v)| *p += v);
        }
        pool.iter_mut().for_each(|p| *p /= rows.len() as f64);
        Ok(pool)
    }

    pub fn regression_weights(&self) -> (&[f64], f64) {
        let p = &self.params;
        (&p.get("head.reg.w").expect("head").data, p.get("head.reg.b").expect("head").data[0])
    }

    pub fn classification_weights(&self) -> (&[f64], &[f64]) {
        let p = &self.params;
        (&p.get("head.cls.w").expect("head").data, &p.get("head.cls.b").expect("head").data)
    }

    /// Similarity score in [1, 5] from the regression head.
    pub fn predict_score(&self, enc_ids: &[u32]) -> Result<f64> {
        let pool = self.encoder_mean_pool(enc_ids)?;
        let (w, b) = self.regression_weights();
        Ok(super::heads::regression_head(&pool, w, b))
    }

    /// Class probabilities from the classification head.
    pub fn predict_class(&self, enc_ids: &[u32]) -> Result<[f64; 2]> {
        let pool = self.encoder_mean_pool(enc_ids)?;
        let (w, b) = self.classification_weights();
        Ok(super::heads::classification_head(&pool, w, b))
    }

    fn example_loss(&self, g: &mut Graph, lay: &Layout, ex: &Example) -> Result<NodeId> {
        let enc_ids = trim_padding(&ex.input);
        self.check_ids(enc_ids)?;
        match &ex.target {
            Target::Sequence(target) => {
                let target = trim_padding(target);
                self.check_ids(target)?;
                let mut dec_in = Vec::with_capacity(target.len());
                if !target.is_empty() {
                    dec_in.push(DECODER_START_ID);
                    dec_in.extend_from_slice(&target[..target.len() - 1]);
                }
                let (enc, keys) = self.build_encoder(g, lay, enc_ids);
                let logits = self.build_decoder(g, lay, enc, &keys, &dec_in);
                let labels = target.iter().map(|&t| (t != PAD_ID).then_some(t as usize)).collect();
                g.cross_entropy(logits, labels).ok_or(Error::AllPadding)
            }
            Target::Score(score) => {
                let rows = non_pad_rows(enc_ids)?;
                let (enc, _) = self.build_encoder(g, lay, enc_ids);
                let pool = g.mean_rows(enc, rows);
                let (w, b) = (g.param(lay.reg_w), g.param(lay.reg_b));
                let z = g.matmul(pool, w);
                let z = g.add(z, b);
                let s = g.sigmoid(z);
                let pred = g.affine(s, 4.0, 1.0);
                Ok(g.squared_error(pred, *score))
            }
            Target::Class(label) => {
                if *label > 1 {
                    return Err(Error::invalid(format!("class label {label} outside {{0, 1}}")));
                }
                let rows = non_pad_rows(enc_ids)?;
                let (enc, _) = self.build_encoder(g, lay, enc_ids);
                let pool = g.mean_rows(enc, rows);
                let (w, b) = (g.param(lay.cls_w), g.param(lay.cls_b));
                let z = g.matmul(pool, w);
                let z = g.add_row(z, b);
                g.cross_entropy(z, vec![Some(*label)]).ok_or(Error::AllPadding)
            }
        }
    }

    /// Loss of a single example.
    pub fn loss(&self, ex: &Example) -> Result<f64> {
        let lay = self.layout();
        let mut g = Graph::new(&self.params, None);
        let out = self.example_loss(&mut g, &lay, ex)?;
        Ok(g.value(out).data[0])
    }

    /// Loss of one example and its gradients for the trainable tensors.
    pub fn loss_and_grad(&self, ex: &Example, mask: &TrainableMask) -> Result<(f64, Gradients)> {
        let lay = self.layout();
        let mut g = Graph::new(&self.params, Some(&mask.0));
        let out = self.example_loss(&mut g, &lay, ex)?;
        let loss = g.value(out).data[0];
        Ok((loss, g.backward(out)))
    }

    /// Sums per-example losses and gradients in order into `acc`; returns
    /// the summed loss. Dividing by the total example count afterwards gives
    /// the batch mean independent of how examples were grouped.
    pub fn accumulate(&self, batch: &[Example], mask: &TrainableMask, acc: &mut Gradients) -> Result<f64> {
        let results = crate::par::map_ordered(batch, |ex| self.loss_and_grad(ex, mask));
        let mut total = 0.0;
        for r in results {
            let (loss, grads) = r?;
            total += loss;
            for (a, g) in acc.iter_mut().zip(grads) {
                if let Some(g) = g {
                    match a {
                        Some(a) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += y),
                        None => *a = Some(g),
                    }
                }
            }
        }
        Ok(total)
    }

    /// Mean loss and mean gradients over a batch.
    pub fn batch_loss_and_grad(&self, batch: &[Example], mask: &TrainableMask) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut acc = vec![None; self.params.len()];
        let total = self.accumulate(batch, mask, &mut acc)?;
        let k = batch.len() as f64;
        for g in acc.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v /= k);
        }
        Ok((total / k, acc))
    }

    pub fn encode_input(&self, enc_ids: &[u32]) -> Result<EncodedInput> {
        self.check_ids(enc_ids)?;
        let lay = self.layout();
        let mut g = Graph::new(&self.params, None);
        let (enc, keys) = self.build_encoder(&mut g, &lay, enc_ids);
        Ok(EncodedInput {
            states: g.value(enc).clone(),
            key_allowed: keys,
        })
    }

    /// Log-probabilities of the token following `prefix` (which excludes the
    /// start token).
    pub fn next_log_probs(&self, enc: &EncodedInput, prefix: &[u32]) -> Result<Vec<f64>> {
        let mut dec_ids = Vec::with_capacity(prefix.len() + 1);
        dec_ids.push(DECODER_START_ID);
        dec_ids.extend_from_slice(prefix);
        self.check_ids(&dec_ids)?;
        let lay = self.layout();
        let mut g = Graph::new(&self.params, None);
        let enc_node = g.constant(enc.states.clone());
        let logits = self.build_decoder(&mut g, &lay, enc_node, &enc.key_allowed, &dec_ids);
        let v = g.value(logits);
        Ok(log_softmax(v.row(v.rows - 1)))
    }
}

fn trim_padding(ids: &[u32]) -> &[u32] {
    let end = ids.iter().rposition(|&i| i != PAD_ID).map_or(0, |p| p + 1);
    &ids[..end]
}

fn non_pad_rows(ids: &[u32]) -> Result<Vec<usize>> {
    let rows: Vec<usize> = ids.iter().enumerate().filter(|(_, &id)| id != PAD_ID).map(|(i, _)| i).collect();
    if rows.is_empty() {
        return Err(Error::AllPadding);
    }
    Ok(rows)
}

/// Mean token cross-entropy of `logits` against `targets`, skipping rows
/// where `pad_mask` is true.
pub fn loss_xent(logits: &Mat, targets: &[u32], pad_mask: &[bool]) -> Result<f64> {
    if logits.rows != targets.len() || targets.len() != pad_mask.len() {
        return Err(Error::LengthMismatch {
            left: logits.rows,
            right: targets.len().min(pad_mask.len()),
        });
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (r, (&t, &pad)) in targets.iter().zip(pad_mask).enumerate() {
        if pad {
            continue;
        }
        if t as usize >= logits.cols {
            return Err(Error::IdOutOfRange {
                id: t,
                vocab_size: logits.cols,
            });
        }
        total -= log_softmax(logits.row(r))[t as usize];
        count += 1;
    }
    if count == 0 {
        return Err(Error::AllPadding);
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(vocab: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab,
            d_model: 8,
            n_heads: 2,
            d_ff: 12,
            n_enc_layers: 1,
            n_dec_layers: 1,
            max_len: 16,
            position_scheme: PositionScheme::LearnedAbsolute,
            tie_embeddings: true,
        }
    }

    #[test]
    fn parameter_count_matches_hand_total() {
        let cfg = ModelConfig {
            vocab_size: 100,
            d_model: 16,
            n_heads: 4,
            d_ff: 32,
            n_enc_layers: 2,
            n_dec_layers: 2,
            max_len: 64,
            position_scheme: PositionScheme::LearnedAbsolute,
            tie_embeddings: true,
        };
        // embedding 1600, positions 2·1024, encoder layers 2·2080 + 16,
        // decoder layers 2·3120 + 16, heads 51
        assert_eq!(parameter_count(&cfg), 14131);
        let m = Seq2Seq::init(&cfg, 3).unwrap();
        assert_eq!(m.params().num_values(), 14131);
    }

    #[test]
    fn init_is_deterministic() {
        let a = Seq2Seq::init(&tiny(20), 11).unwrap();
        let b = Seq2Seq::init(&tiny(20), 11).unwrap();
        let c = Seq2Seq::init(&tiny(20), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(tiny(20).head_dim(), 4);
    }

    #[test]
    fn forward_shape_and_errors() {
        let m = Seq2Seq::init(&tiny(20), 1).unwrap();
        let l = m.forward(&[5, 6, 7], &[1, 9]).unwrap();
        assert_eq!((l.rows, l.cols), (2, 20));
        assert!(matches!(m.forward(&[25], &[1]), Err(Error::IdOutOfRange { id: 25, .. })));
        assert!(matches!(m.forward(&[4; 17], &[1]), Err(Error::LengthOverflow { len: 17, max: 16 })));
    }

    #[test]
    fn decoder_is_causal_and_padding_is_masked() {
        for scheme in [
            PositionScheme::LearnedAbsolute,
            PositionScheme::RelativeBucket {
                num_buckets: 8,
                max_distance: 16,
            },
        ] {
            let cfg = ModelConfig {
                position_scheme: scheme,
                ..tiny(20)
            };
            let m = Seq2Seq::init(&cfg, 2).unwrap();
            let a = m.forward(&[5, 6, 0, 0], &[1, 7, 8, 9]).unwrap();
            let b = m.forward(&[5, 6, 0, 0], &[1, 7, 12, 4]).unwrap();
            assert_eq!(a.data[..2 * 20], b.data[..2 * 20]);
            let c = m.forward(&[5, 6], &[1, 7, 8, 9]).unwrap();
            for (x, y) in a.data.iter().zip(&c.data) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mean_pool_ignores_padding() {
        let m = Seq2Seq::init(&tiny(20), 4).unwrap();
        let a = m.encoder_mean_pool(&[5, 9]).unwrap();
        let b = m.encoder_mean_pool(&[5, 9, 0, 0, 0]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let states = m.encoder_states(&[5, 9]).unwrap();
        for (c, p) in a.iter().enumerate() {
            assert!((p - (states.at(0, c) + states.at(1, c)) / 2.0).abs() < 1e-12);
        }
        assert!(matches!(m.encoder_mean_pool(&[0, 0]), Err(Error::AllPadding)));
    }

    #[test]
    fn xent_hand_cases() {
        let uniform = Mat::from_vec(2, 4, vec![0.3; 8]);
        assert!((loss_xent(&uniform, &[1, 2], &[false, false]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!(matches!(loss_xent(&uniform, &[1, 2], &[true, true]), Err(Error::AllPadding)));
        let sharp = Mat::from_vec(1, 4, vec![0.0, 800.0, 0.0, 0.0]);
        assert!(loss_xent(&sharp, &[1], &[false]).unwrap() < 1e-300);
    }

    #[test]
    fn duplicated_batch_has_same_mean() {
        let m = Seq2Seq::init(&tiny(20), 5).unwrap();
        let ex = Example {
            input: vec![5, 6, 7],
            target: Target::Sequence(vec![8, 9, 1]),
        };
        let mask = TrainableMask::all(m.params());
        let (l1, g1) = m.batch_loss_and_grad(std::slice::from_ref(&ex), &mask).unwrap();
        let (l2, g2) = m.batch_loss_and_grad(&[ex.clone(), ex], &mask).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn embedding_mask_limits_gradients() {
        let m = Seq2Seq::init(&tiny(20), 6).unwrap();
        let mask = TrainableMask::embeddings_only(m.params());
        let ex = Example {
            input: vec![5, 6],
            target: Target::Sequence(vec![7, 1]),
        };
        let (_, g) = m.loss_and_grad(&ex, &mask).unwrap();
        for (i, t) in m.params().tensors().iter().enumerate() {
            assert_eq!(g[i].is_some(), t.name == EMBEDDING, "{}", t.name);
        }
    }

    #[test]
    fn relative_buckets_follow_t5_layout() {
        assert_eq!(relative_bucket(0, true, 32, 128), 0);
        assert_eq!(relative_bucket(3, true, 32, 128), 16 + 3);
        assert_eq!(relative_bucket(-3, true, 32, 128), 3);
        assert_eq!(relative_bucket(-1000, true, 32, 128), 15);
        assert_eq!(relative_bucket(2, false, 32, 128), 0);
        assert_eq!(relative_bucket(-5, false, 32, 128), 5);
    }
}
