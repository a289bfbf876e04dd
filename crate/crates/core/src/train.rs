//! Training loop with gradient accumulation and early stopping, task data
//! wiring, prediction and the pretrain / finetune / evaluate runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::{OutputStrategy, RunConfig, Task};
use crate::denoise::{load_cache, DenoisePair};
use crate::error::{Error, Result};
use crate::metrics::{metrics_report, ClassificationReport, F1Average, RegressionReport};
use crate::model::decode::{beam_decode, greedy_decode};
use crate::model::{Checkpoint, Example, Gradients, Seq2Seq, Target, TrainableMask};
use crate::ner::{
    entity_prf, extract_entities, merge_windows, parse_tagged_output, to_bio, write_conll_predictions, Bio,
    repair_bio, LabelLanguage, NerReport,
};
use crate::optim::Optimizer;
use crate::par::map_ordered;
use crate::rng::{mix_seed, Xoshiro256};
use crate::tasks::{
    build_ner_target, encode_assin_pair, encode_ner_input, encode_segments, make_similarity_target, parse_score_string,
    read_conll, read_pairs_tsv, strip_accents, window_offsets, Entailment, NerExample, ParsedScore,
    SentencePairExample, SCORE_MAX_TOKENS,
};
use crate::unigram::{UnigramVocab, EOS_ID};

pub const CHECKPOINT_FILE: &str = "model.sqfg";
pub const LOG_FILE: &str = "train_log.tsv";
pub const CURVE_FILE: &str = "curve.tsv";
const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_objective: Option<f64>,
    pub val_metrics: Vec<(String, f64)>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: Option<usize>,
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

impl TrainLog {
    /// One row per epoch. Wall-clock seconds are left out when
    /// `deterministic` so reruns are byte-identical.
    pub fn to_tsv(&self, deterministic: bool) -> String {
        let names: Vec<&str> = self
            .records
            .first()
            .map(|r| r.val_metrics.iter().map(|(n, _)| n.as_str()).collect())
            .unwrap_or_default();
        let mut out = String::from("epoch\ttrain_loss\tval_loss\tval_objective");
        for n in &names {
            let _ = write!(out, "\t{n}");
        }
        if !deterministic {
            out += "\twall_seconds";
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(
                out,
                "{}\t{:.6}\t{}\t{}",
                r.epoch,
                r.train_loss,
                opt_cell(r.val_loss),
                opt_cell(r.val_objective)
            );
            for (_, v) in &r.val_metrics {
                let _ = write!(out, "\t{v:.6}");
            }
            if !deterministic {
                let _ = write!(out, "\t{:.3}", r.wall_seconds);
            }
            out.push('\n');
        }
        if let Some(b) = self.best_epoch {
            let _ = writeln!(out, "# best_epoch={b}");
        }
        out
    }

    /// Plot-ready `epoch train val` rows.
    pub fn curve_tsv(&self) -> String {
        let mut out = String::from("epoch\ttrain\tval\n");
        for r in &self.records {
            let _ = writeln!(out, "{}\t{:.6}\t{}", r.epoch, r.train_loss, opt_cell(r.val_loss.or(r.val_objective)));
        }
        out
    }
}

/// Result of one validation pass; lower `objective` is better.
#[derive(Debug, Clone, PartialEq)]
pub struct Validation {
    pub objective: f64,
    pub loss: Option<f64>,
    pub metrics: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoopSettings {
    pub batch_size: usize,
    pub grad_accum_steps: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl LoopSettings {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            batch_size: cfg.batch_size,
            grad_accum_steps: cfg.grad_accum_steps,
            max_epochs: cfg.max_epochs,
            patience: cfg.patience,
            seed: cfg.seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Seq2Seq,
    pub optimizer: Optimizer,
    pub log: TrainLog,
}

pub type Validator<'a> = &'a mut dyn FnMut(&Seq2Seq) -> Result<Validation>;

/// Mini-batch training. Each optimizer step averages the gradients of
/// `batch_size · grad_accum_steps` examples, summed in example order, so
/// accumulation gives the same result as one large batch. With a validator
/// the parameters of the best epoch are returned and training stops after
/// `patience + 1` epochs without improvement; otherwise the last epoch wins.
pub fn train_loop(
    mut model: Seq2Seq,
    mut optimizer: Optimizer,
    mask: &TrainableMask,
    examples: &[Example],
    s: &LoopSettings,
    mut validate: Option<Validator>,
) -> Result<Trained> {
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if s.batch_size == 0 || s.grad_accum_steps == 0 {
        return Err(Error::invalid("batch_size and grad_accum_steps must be positive"));
    }
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Seq2Seq, Optimizer)> = None;
    let mut bad_epochs = 0usize;
    let step_size = s.batch_size * s.grad_accum_steps;
    for epoch in 1..=s.max_epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..examples.len()).collect();
        Xoshiro256::seed_from_u64(mix_seed(s.seed, epoch as u64)).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for group in order.chunks(step_size) {
            let mut acc: Gradients = vec![None; model.params().len()];
            for micro in group.chunks(s.batch_size) {
                let batch: Vec<Example> = micro.iter().map(|&i| examples[i].clone()).collect();
                epoch_loss += model.accumulate(&batch, mask, &mut acc)?;
            }
            let k = group.len() as f64;
            for g in acc.iter_mut().flatten() {
                g.iter_mut().for_each(|v| *v /= k);
            }
            optimizer.step(model.params_mut(), &acc, mask)?;
        }
        let train_loss = epoch_loss / examples.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged);
        }
        let v = validate.as_mut().map(|f| f(&model)).transpose()?;
        log.records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss: v.as_ref().and_then(|v| v.loss),
            val_objective: v.as_ref().map(|v| v.objective),
            val_metrics: v.as_ref().map(|v| v.metrics.clone()).unwrap_or_default(),
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        let Some(v) = v else {
            log.best_epoch = Some(epoch);
            continue;
        };
        if best.as_ref().is_none_or(|(b, _, _)| v.objective < *b) {
            best = Some((v.objective, model.clone(), optimizer.clone()));
            log.best_epoch = Some(epoch);
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > s.patience {
                break;
            }
        }
    }
    if let Some((_, m, o)) = best {
        model = m;
        optimizer = o;
    }
    Ok(Trained { model, optimizer, log })
}

/// Cuts `ids` to `max_len`, keeping a final end-of-sequence when present.
pub fn fit_length(mut ids: Vec<u32>, max_len: usize) -> Vec<u32> {
    if ids.len() > max_len {
        let ends_with_eos = ids.last() == Some(&EOS_ID);
        ids.truncate(max_len);
        if ends_with_eos {
            if let Some(last) = ids.last_mut() {
                *last = EOS_ID;
            }
        }
    }
    ids
}

pub fn pretrain_examples(pairs: &[DenoisePair]) -> Vec<Example> {
    let trim = |ids: &[u32]| -> Vec<u32> {
        let end = ids.iter().rposition(|&i| i != 0).map_or(0, |p| p + 1);
        ids[..end].to_vec()
    };
    pairs
        .iter()
        .filter(|p| p.input_ids.iter().any(|&i| i != 0))
        .map(|p| Example {
            input: trim(&p.input_ids),
            target: Target::Sequence(trim(&p.target_ids)),
        })
        .collect()
}

pub fn similarity_example(
    vocab: &UnigramVocab,
    p: &SentencePairExample,
    strategy: OutputStrategy,
    max_len: usize,
) -> Result<Example> {
    let score = p
        .similarity
        .ok_or_else(|| Error::Format(format!("pair {} has no similarity score", p.id)))?;
    let input = fit_length(encode_assin_pair(vocab, &p.sentence1, &p.sentence2), max_len);
    let target = match strategy {
        OutputStrategy::LinearHead => Target::Score(score),
        OutputStrategy::Generate => Target::Sequence(fit_length(make_similarity_target(vocab, score)?, max_len)),
    };
    Ok(Example { input, target })
}

pub fn entailment_example(vocab: &UnigramVocab, p: &SentencePairExample, max_len: usize) -> Result<Example> {
    let label = p
        .entailment
        .ok_or_else(|| Error::Format(format!("pair {} has no entailment label", p.id)))?;
    Ok(Example {
        input: fit_length(encode_assin_pair(vocab, &p.sentence1, &p.sentence2), max_len),
        target: Target::Class(label.index()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NerSettings {
    /// Window size and stride, in words.
    pub window_size: usize,
    pub window_stride: usize,
    pub label_language: LabelLanguage,
    pub strip_accents: bool,
    pub max_len: usize,
    pub beam_width: usize,
}

impl NerSettings {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            window_size: cfg.window_size,
            window_stride: cfg.window_stride,
            label_language: cfg.label_language,
            strip_accents: cfg.strip_accents,
            max_len: cfg.model.max_len,
            beam_width: cfg.beam_width,
        }
    }

    fn prepare(&self, words: &[String]) -> Vec<String> {
        if self.strip_accents {
            words.iter().map(|w| strip_accents(w)).collect()
        } else {
            words.to_vec()
        }
    }
}

/// One generation example per word window of every document.
pub fn ner_examples(vocab: &UnigramVocab, docs: &[NerExample], s: &NerSettings) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for d in docs {
        let words = s.prepare(&d.words);
        for off in window_offsets(words.len(), s.window_size, s.window_stride)? {
            let end = (off + s.window_size).min(words.len());
            // A window may open inside an entity.
            let mut tags = d.tags[off..end].to_vec();
            repair_bio(&mut tags);
            let target = build_ner_target(&words[off..end], &tags, s.label_language)?;
            out.push(Example {
                input: fit_length(encode_ner_input(vocab, &words[off..end]), s.max_len),
                target: Target::Sequence(fit_length(encode_segments(vocab, &[target]), s.max_len)),
            });
        }
    }
    Ok(out)
}

/// Similarity predictions: the regression head, or greedy generation of
/// at most five tokens parsed as a number.
pub fn predict_similarity(
    model: &Seq2Seq,
    vocab: &UnigramVocab,
    pairs: &[SentencePairExample],
    strategy: OutputStrategy,
    max_len: usize,
) -> Result<Vec<ParsedScore>> {
    map_ordered(pairs, |p| {
        let input = fit_length(encode_assin_pair(vocab, &p.sentence1, &p.sentence2), max_len);
        match strategy {
            OutputStrategy::LinearHead => Ok(ParsedScore {
                value: model.predict_score(&input)?,
                failed: false,
            }),
            OutputStrategy::Generate => {
                let out = greedy_decode(model, &input, SCORE_MAX_TOKENS)?;
                Ok(parse_score_string(&out, vocab))
            }
        }
    })
    .into_iter()
    .collect()
}

pub fn predict_entailment(
    model: &Seq2Seq,
    vocab: &UnigramVocab,
    pairs: &[SentencePairExample],
    max_len: usize,
) -> Result<Vec<[f64; 2]>> {
    map_ordered(pairs, |p| {
        model.predict_class(&fit_length(encode_assin_pair(vocab, &p.sentence1, &p.sentence2), max_len))
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NerDiagnostics {
    pub dangling: usize,
    pub unknown_labels: usize,
    pub empty_segments: usize,
    pub surplus_words: usize,
}

/// Beam-decodes every window of a document and merges the window tags.
pub fn predict_ner(
    model: &Seq2Seq,
    vocab: &UnigramVocab,
    words: &[String],
    s: &NerSettings,
) -> Result<(Vec<Bio>, NerDiagnostics)> {
    if words.is_empty() {
        return Ok((Vec::new(), NerDiagnostics::default()));
    }
    let words = s.prepare(words);
    let offsets = window_offsets(words.len(), s.window_size, s.window_stride)?;
    let windows = map_ordered(&offsets, |&off| -> Result<_> {
        let end = (off + s.window_size).min(words.len());
        let input = fit_length(encode_ner_input(vocab, &words[off..end]), s.max_len);
        let out = beam_decode(model, &input, s.beam_width, s.max_len)?;
        let parsed = parse_tagged_output(&vocab.decode_until_eos(&out)?);
        let (tags, surplus) = to_bio(&parsed.segments, end - off);
        let diag = NerDiagnostics {
            dangling: parsed.dangling as usize,
            unknown_labels: parsed.unknown_labels,
            empty_segments: parsed.empty_segments,
            surplus_words: surplus,
        };
        Ok(((off, tags), diag))
    });
    let mut per_window = Vec::with_capacity(windows.len());
    let mut total = NerDiagnostics::default();
    for w in windows {
        let (win, d) = w?;
        per_window.push(win);
        total.dangling += d.dangling;
        total.unknown_labels += d.unknown_labels;
        total.empty_segments += d.empty_segments;
        total.surplus_words += d.surplus_words;
    }
    Ok((merge_windows(&per_window, words.len())?, total))
}

/// Entity scores of predicted against gold tags over many documents.
pub fn score_ner(gold: &[Vec<Bio>], pred: &[Vec<Bio>]) -> NerReport {
    let mut report = NerReport::default();
    for (g, p) in gold.iter().zip(pred) {
        report.merge(&entity_prf(&extract_entities(g), &extract_entities(p)));
    }
    report
}

/// Exclusive ownership of a checkpoint directory for one run.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display(), e))?;
        let path = dir.join(LOCK_FILE);
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| Error::io(path.display(), e))?;
        Ok(Self { path })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::invalid(format!("config: [paths] {what} is required")))
}

pub fn load_vocab(cfg: &RunConfig) -> Result<UnigramVocab> {
    UnigramVocab::load(required(&cfg.paths.vocab, "vocab")?)
}

pub fn load_pairs(path: &Path) -> Result<Vec<SentencePairExample>> {
    read_pairs_tsv(&fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?)
}

pub fn load_ner(path: &Path) -> Result<Vec<NerExample>> {
    read_conll(&fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?)
}

/// The starting model (a checkpoint or a fresh initialization) and the
/// sequence length limit to use with it.
fn initial_model(cfg: &RunConfig, vocab: &UnigramVocab) -> Result<(Seq2Seq, usize)> {
    if let Some(path) = &cfg.paths.init_checkpoint {
        let (model, _) = Checkpoint::load(path)?.into_model()?;
        check_vocab(&model, vocab)?;
        let max_len = cfg.model.max_len.min(model.config().max_len);
        return Ok((model, max_len));
    }
    let mut mc = cfg.model.clone();
    if mc.vocab_size == 0 {
        mc.vocab_size = vocab.len();
    } else if mc.vocab_size != vocab.len() {
        return Err(Error::invalid(format!(
            "model vocab_size {} differs from the vocabulary's {}",
            mc.vocab_size,
            vocab.len()
        )));
    }
    let max_len = mc.max_len;
    Ok((Seq2Seq::init(&mc, cfg.seed)?, max_len))
}

fn check_vocab(model: &Seq2Seq, vocab: &UnigramVocab) -> Result<()> {
    if model.config().vocab_size != vocab.len() {
        return Err(Error::IncompatibleCheckpoint(format!(
            "checkpoint vocab_size {} but vocabulary has {} pieces",
            model.config().vocab_size,
            vocab.len()
        )));
    }
    Ok(())
}

fn write_outputs(cfg: &RunConfig, trained: &Trained) -> Result<()> {
    let Some(dir) = &cfg.paths.checkpoint_dir else { return Ok(()) };
    let ckpt = Checkpoint::from_model(&trained.model, trained.optimizer.state_tensors(trained.model.params()));
    ckpt.save(&dir.join(CHECKPOINT_FILE))?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(p.display(), e))
    };
    write(LOG_FILE, trained.log.to_tsv(cfg.deterministic))?;
    write(CURVE_FILE, trained.log.curve_tsv())
}

fn mean_loss(model: &Seq2Seq, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let losses: Result<Vec<f64>> = map_ordered(examples, |e| model.loss(e)).into_iter().collect();
    Ok(losses?.iter().sum::<f64>() / examples.len() as f64)
}

/// Denoising pretraining from a DNPZ cache.
pub fn run_pretrain(cfg: &RunConfig) -> Result<Trained> {
    cfg.validate()?;
    let _lock = cfg.paths.checkpoint_dir.as_deref().map(RunLock::acquire).transpose()?;
    let vocab = load_vocab(cfg)?;
    let (model, max_len) = initial_model(cfg, &vocab)?;
    let (_, pairs) = load_cache(required(&cfg.paths.train, "train")?)?;
    let fit = |pairs: &[DenoisePair]| -> Vec<Example> {
        pretrain_examples(pairs)
            .into_iter()
            .map(|mut e| {
                e.input = fit_length(e.input, max_len);
                if let Target::Sequence(t) = e.target {
                    e.target = Target::Sequence(fit_length(t, max_len));
                }
                e
            })
            .collect()
    };
    let train = fit(&pairs);
    let valid = match &cfg.paths.valid {
        Some(p) => Some(fit(&load_cache(p)?.1)),
        None => None,
    };
    let mask = if cfg.embeddings_only {
        TrainableMask::embeddings_only(model.params())
    } else {
        TrainableMask::all(model.params())
    };
    let optimizer = Optimizer::new(cfg.optimizer_kind()?, cfg.lr, model.params());
    let mut validate = |m: &Seq2Seq| -> Result<Validation> {
        let loss = mean_loss(m, valid.as_deref().unwrap_or_default())?;
        Ok(Validation {
            objective: loss,
            loss: Some(loss),
            metrics: Vec::new(),
        })
    };
    let validator: Option<Validator> = if valid.is_some() { Some(&mut validate) } else { None };
    let trained = train_loop(model, optimizer, &mask, &train, &LoopSettings::from_config(cfg), validator)?;
    write_outputs(cfg, &trained)?;
    Ok(trained)
}

/// Fine-tuning for similarity, entailment or NER with early stopping on
/// the validation split.
pub fn run_finetune(cfg: &RunConfig) -> Result<Trained> {
    cfg.validate()?;
    if cfg.task == Task::Pretrain {
        return Err(Error::invalid("finetune needs a similarity, entailment or ner task"));
    }
    let _lock = cfg.paths.checkpoint_dir.as_deref().map(RunLock::acquire).transpose()?;
    let vocab = load_vocab(cfg)?;
    let (model, max_len) = initial_model(cfg, &vocab)?;
    let train_path = required(&cfg.paths.train, "train")?;
    let valid_path = required(&cfg.paths.valid, "valid")?;
    let optimizer = Optimizer::new(cfg.optimizer_kind()?, cfg.lr, model.params());
    let settings = LoopSettings::from_config(cfg);
    let trained = match cfg.task {
        Task::Similarity => {
            let (train, valid) = (load_pairs(train_path)?, load_pairs(valid_path)?);
            let strategy = cfg.output_strategy;
            let examples = train
                .iter()
                .map(|p| similarity_example(&vocab, p, strategy, max_len))
                .collect::<Result<Vec<_>>>()?;
            let gold = gold_scores(&valid)?;
            let mask = match strategy {
                OutputStrategy::LinearHead => TrainableMask::encoder_and_heads(model.params()),
                OutputStrategy::Generate => TrainableMask::all(model.params()),
            };
            let mut validate = |m: &Seq2Seq| -> Result<Validation> {
                let preds = predict_similarity(m, &vocab, &valid, strategy, max_len)?;
                let values: Vec<f64> = preds.iter().map(|p| p.value).collect();
                let mse = crate::metrics::mse(&values, &gold)?;
                let pearson = crate::metrics::pearson(&values, &gold).unwrap_or(0.0);
                Ok(Validation {
                    objective: mse,
                    loss: None,
                    metrics: vec![("mse".into(), mse), ("pearson".into(), pearson)],
                })
            };
            train_loop(model, optimizer, &mask, &examples, &settings, Some(&mut validate))?
        }
        Task::Entailment => {
            let (train, valid) = (load_pairs(train_path)?, load_pairs(valid_path)?);
            let examples = train
                .iter()
                .map(|p| entailment_example(&vocab, p, max_len))
                .collect::<Result<Vec<_>>>()?;
            let valid_examples = valid
                .iter()
                .map(|p| entailment_example(&vocab, p, max_len))
                .collect::<Result<Vec<_>>>()?;
            let mask = TrainableMask::encoder_and_heads(model.params());
            let mut validate = |m: &Seq2Seq| -> Result<Validation> {
                let ce = mean_loss(m, &valid_examples)?;
                let probs = predict_entailment(m, &vocab, &valid, max_len)?;
                let pred: Vec<usize> = probs.iter().map(|p| usize::from(p[1] > p[0])).collect();
                let gold: Vec<usize> = valid_examples
                    .iter()
                    .map(|e| match e.target {
                        Target::Class(c) => c,
                        _ => unreachable!("entailment examples carry classes"),
                    })
                    .collect();
                let r = ClassificationReport::compute(&pred, &gold, F1Average::Macro)?;
                Ok(Validation {
                    objective: ce,
                    loss: Some(ce),
                    metrics: vec![("accuracy".into(), r.accuracy), ("f1".into(), r.f1)],
                })
            };
            train_loop(model, optimizer, &mask, &examples, &settings, Some(&mut validate))?
        }
        Task::Ner => {
            let (train, valid) = (load_ner(train_path)?, load_ner(valid_path)?);
            let s = NerSettings {
                max_len,
                ..NerSettings::from_config(cfg)
            };
            let examples = ner_examples(&vocab, &train, &s)?;
            let mask = TrainableMask::all(model.params());
            let mut validate = |m: &Seq2Seq| -> Result<Validation> {
                let mut pred = Vec::with_capacity(valid.len());
                for d in &valid {
                    pred.push(predict_ner(m, &vocab, &d.words, &s)?.0);
                }
                let gold: Vec<Vec<Bio>> = valid.iter().map(|d| d.tags.clone()).collect();
                let f1 = score_ner(&gold, &pred).micro.f1();
                Ok(Validation {
                    objective: -f1,
                    loss: None,
                    metrics: vec![("micro_f1".into(), f1)],
                })
            };
            train_loop(model, optimizer, &mask, &examples, &settings, Some(&mut validate))?
        }
        Task::Pretrain => unreachable!("rejected above"),
    };
    write_outputs(cfg, &trained)?;
    Ok(trained)
}

fn gold_scores(pairs: &[SentencePairExample]) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|p| {
            p.similarity
                .ok_or_else(|| Error::Format(format!("pair {} has no similarity score", p.id)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// `key=value` lines followed by the tab-separated table.
    pub report: String,
    /// Per-item predictions (TSV, or three-column CoNLL for NER).
    pub predictions: String,
}

/// Metrics of a checkpoint on the `valid` or `test` split.
pub fn run_evaluate(cfg: &RunConfig, checkpoint: &Path, split: &str) -> Result<Evaluation> {
    cfg.validate()?;
    let vocab = load_vocab(cfg)?;
    let (model, _) = Checkpoint::load(checkpoint)?.into_model()?;
    check_vocab(&model, &vocab)?;
    let max_len = cfg.model.max_len.min(model.config().max_len);
    let path = match split {
        "valid" => required(&cfg.paths.valid, "valid")?,
        "test" => required(&cfg.paths.test, "test")?,
        "train" => required(&cfg.paths.train, "train")?,
        other => return Err(Error::invalid(format!("unknown split {other:?}"))),
    };
    match cfg.task {
        Task::Similarity => {
            let pairs = load_pairs(path)?;
            let gold = gold_scores(&pairs)?;
            let preds = predict_similarity(&model, &vocab, &pairs, cfg.output_strategy, max_len)?;
            Ok(similarity_evaluation(&pairs, &gold, &preds)?)
        }
        Task::Entailment => {
            let pairs = load_pairs(path)?;
            let probs = predict_entailment(&model, &vocab, &pairs, max_len)?;
            let pred: Vec<Entailment> = probs.iter().map(|p| Entailment::from_index(usize::from(p[1] > p[0]))).collect();
            entailment_evaluation(&pairs, &pred)
        }
        Task::Ner => {
            let docs = load_ner(path)?;
            let s = NerSettings {
                max_len,
                ..NerSettings::from_config(cfg)
            };
            let mut preds = Vec::with_capacity(docs.len());
            let mut diag = NerDiagnostics::default();
            for d in &docs {
                let (tags, dg) = predict_ner(&model, &vocab, &d.words, &s)?;
                preds.push(tags);
                diag.dangling += dg.dangling;
                diag.unknown_labels += dg.unknown_labels;
                diag.empty_segments += dg.empty_segments;
                diag.surplus_words += dg.surplus_words;
            }
            let mut eval = ner_evaluation(&docs, &preds);
            eval.report.insert_str(
                0,
                &format!(
                    "dangling_segments={}\nunknown_labels={}\nempty_segments={}\nsurplus_words={}\n",
                    diag.dangling, diag.unknown_labels, diag.empty_segments, diag.surplus_words
                ),
            );
            Ok(eval)
        }
        Task::Pretrain => {
            let (_, pairs) = load_cache(path)?;
            let examples: Vec<Example> = pretrain_examples(&pairs);
            let loss = mean_loss(&model, &examples)?;
            Ok(Evaluation {
                report: format!("loss={loss:.6}\nn={}\n", examples.len()),
                predictions: String::new(),
            })
        }
    }
}

/// Report for given similarity predictions.
pub fn similarity_evaluation(
    pairs: &[SentencePairExample],
    gold: &[f64],
    preds: &[ParsedScore],
) -> Result<Evaluation> {
    let values: Vec<f64> = preds.iter().map(|p| p.value).collect();
    let r = RegressionReport::compute(&values, gold)?;
    let failures = preds.iter().filter(|p| p.failed).count();
    let mut predictions = String::from("id\tgold\tpred\tparse_failed\n");
    for ((p, g), s) in pairs.iter().zip(gold).zip(preds) {
        let _ = writeln!(predictions, "{}\t{g}\t{:.4}\t{}", p.id, s.value, s.failed);
    }
    Ok(Evaluation {
        report: format!("parse_failures={failures}\n{}", metrics_report(Some(&r), None)),
        predictions,
    })
}

/// Report for given entailment predictions.
pub fn entailment_evaluation(pairs: &[SentencePairExample], pred: &[Entailment]) -> Result<Evaluation> {
    let gold = pairs
        .iter()
        .map(|p| {
            p.entailment
                .map(Entailment::index)
                .ok_or_else(|| Error::Format(format!("pair {} has no entailment label", p.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let pred_idx: Vec<usize> = pred.iter().map(|p| p.index()).collect();
    let r = ClassificationReport::compute(&pred_idx, &gold, F1Average::Macro)?;
    let mut predictions = String::from("id\tgold\tpred\n");
    for ((p, &g), e) in pairs.iter().zip(&gold).zip(pred) {
        let _ = writeln!(predictions, "{}\t{}\t{}", p.id, Entailment::from_index(g).as_str(), e.as_str());
    }
    Ok(Evaluation {
        report: metrics_report(None, Some(&r)),
        predictions,
    })
}

/// Report for given NER tag predictions.
pub fn ner_evaluation(docs: &[NerExample], preds: &[Vec<Bio>]) -> Evaluation {
    let gold: Vec<Vec<Bio>> = docs.iter().map(|d| d.tags.clone()).collect();
    let report = score_ner(&gold, preds);
    let rows: Vec<(Vec<String>, Vec<Bio>, Vec<Bio>)> = docs
        .iter()
        .zip(preds)
        .map(|(d, p)| (d.words.clone(), d.tags.clone(), p.clone()))
        .collect();
    Evaluation {
        report: format!("{}{}", report.to_report(), report.to_table()),
        predictions: write_conll_predictions(&rows),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_length_keeps_eos() {
        assert_eq!(fit_length(vec![5, 6, 7, 1], 3), vec![5, 6, 1]);
        assert_eq!(fit_length(vec![5, 6, 7, 8], 3), vec![5, 6, 7]);
        assert_eq!(fit_length(vec![5, 1], 3), vec![5, 1]);
    }

    #[test]
    fn ner_windows_may_start_inside_entities() {
        let vocab = UnigramVocab::from_pieces(vec![("a".into(), -1.0)]).unwrap();
        let per = crate::ner::NerClass::Person;
        let doc = NerExample {
            doc_id: "d".into(),
            words: ["a", "a", "a", "a"].map(String::from).to_vec(),
            tags: vec![Bio::B(per), Bio::I(per), Bio::I(per), Bio::O],
        };
        let s = NerSettings {
            window_size: 2,
            window_stride: 1,
            label_language: LabelLanguage::English,
            strip_accents: false,
            max_len: 64,
            beam_width: 1,
        };
        assert_eq!(ner_examples(&vocab, &[doc], &s).unwrap().len(), 3);
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let a = RunLock::acquire(dir.path()).unwrap();
        assert!(RunLock::acquire(dir.path()).is_err());
        drop(a);
        assert!(RunLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn log_formats() {
        let log = TrainLog {
            records: vec![EpochRecord {
                epoch: 1,
                train_loss: 2.0,
                val_loss: Some(1.5),
                val_objective: Some(1.5),
                val_metrics: vec![("mse".into(), 0.25)],
                wall_seconds: 3.0,
            }],
            best_epoch: Some(1),
        };
        assert_eq!(
            log.to_tsv(true),
            "epoch\ttrain_loss\tval_loss\tval_objective\tmse\n1\t2.000000\t1.500000\t1.500000\t0.250000\n# best_epoch=1\n"
        );
        assert!(log.to_tsv(false).contains("wall_seconds"));
        assert_eq!(log.curve_tsv(), "epoch\ttrain\tval\n1\t2.000000\t1.500000\n");
    }
}
