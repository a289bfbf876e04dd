//! Run configuration: an INI-style file of `key = value` lines grouped
//! under `[run]`, `[model]`, `[optimizer]`, `[train]`, `[data]`, `[ner]`
//! and `[paths]`. Missing keys take the task defaults of
//! [`RunConfig::for_task`]; unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, PositionScheme};
use crate::ner::LabelLanguage;
use crate::optim::OptimizerKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Pretrain,
    Similarity,
    Entailment,
    Ner,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Task::Pretrain),
            "similarity" => Ok(Task::Similarity),
            "entailment" => Ok(Task::Entailment),
            "ner" => Ok(Task::Ner),
            _ => Err(Error::invalid(format!("unknown task {s:?}"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Pretrain => "pretrain",
            Task::Similarity => "similarity",
            Task::Entailment => "entailment",
            Task::Ner => "ner",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputStrategy {
    Generate,
    LinearHead,
}

impl FromStr for OutputStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generate" => Ok(OutputStrategy::Generate),
            "linear-head" => Ok(OutputStrategy::LinearHead),
            _ => Err(Error::invalid(format!("unknown output strategy {s:?}"))),
        }
    }
}

impl fmt::Display for OutputStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputStrategy::Generate => "generate",
            OutputStrategy::LinearHead => "linear-head",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Paths {
    pub vocab: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    /// Checkpoint to start from; a fresh model otherwise.
    pub init_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub output_strategy: OutputStrategy,
    pub seed: u64,
    /// Omit wall-clock times from logs.
    pub deterministic: bool,
    /// `vocab_size` 0 means "take it from the vocabulary file".
    pub model: ModelConfig,
    pub optimizer: String,
    pub lr: f64,
    pub batch_size: usize,
    pub grad_accum_steps: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub embeddings_only: bool,
    pub mask_rate: f64,
    pub label_language: LabelLanguage,
    /// Window size and stride in words for NER documents.
    pub window_size: usize,
    pub window_stride: usize,
    pub beam_width: usize,
    pub strip_accents: bool,
    pub paths: Paths,
}

impl RunConfig {
    /// Published hyperparameters for each task at desk-scale model size.
    pub fn for_task(task: Task) -> Self {
        let mut model = ModelConfig::small(0);
        let mut cfg = Self {
            task,
            output_strategy: OutputStrategy::Generate,
            seed: 0,
            deterministic: false,
            model: model.clone(),
            optimizer: "radam".into(),
            lr: 1e-4,
            batch_size: 8,
            grad_accum_steps: 1,
            max_epochs: 50,
            patience: 5,
            embeddings_only: false,
            mask_rate: 0.15,
            label_language: LabelLanguage::Portuguese,
            window_size: 512,
            window_stride: 256,
            beam_width: 5,
            strip_accents: false,
            paths: Paths::default(),
        };
        match task {
            Task::Pretrain => {
                cfg.optimizer = "adafactor".into();
                cfg.lr = 0.003;
                cfg.max_epochs = 4;
            }
            Task::Similarity => model.max_len = 128,
            Task::Entailment => {
                model.max_len = 128;
                cfg.patience = 10;
            }
            Task::Ner => {
                cfg.optimizer = "adamw".into();
                cfg.lr = 2e-4;
                cfg.batch_size = 2;
                cfg.grad_accum_steps = 4;
            }
        }
        if task != Task::Pretrain {
            cfg.model = model;
        }
        cfg
    }

    pub fn optimizer_kind(&self) -> Result<OptimizerKind> {
        OptimizerKind::from_name(&self.optimizer)
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer_kind()?;
        if self.batch_size == 0 || self.grad_accum_steps == 0 {
            return Err(Error::invalid("batch_size and grad_accum_steps must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr must be positive"));
        }
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return Err(Error::invalid("mask_rate must lie in [0, 1]"));
        }
        if self.window_stride == 0 || self.window_size <= self.window_stride {
            return Err(Error::invalid("window_size must exceed window_stride > 0"));
        }
        if self.beam_width == 0 {
            return Err(Error::invalid("beam_width must be positive"));
        }
        if self.output_strategy == OutputStrategy::LinearHead && self.task != Task::Similarity {
            return Err(Error::invalid("output_strategy linear-head applies to similarity only"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?;
        let mut cfg = Self::parse(&text)?;
        // Relative data paths are resolved against the config file.
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.paths.vocab,
            &mut cfg.paths.train,
            &mut cfg.paths.valid,
            &mut cfg.paths.test,
            &mut cfg.paths.checkpoint_dir,
            &mut cfg.paths.init_checkpoint,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        let task: Task = ini
            .get_from(Some("run"), "task")
            .ok_or_else(|| Error::invalid("config: [run] task is required"))?
            .parse()?;
        let mut cfg = Self::for_task(task);
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("");
            for (key, value) in props.iter() {
                cfg.set(section, key, value.trim())?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> Result<()> {
        fn num<T: FromStr>(section: &str, key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::invalid(format!("config: [{section}] {key} = {v:?} is not a valid value")))
        }
        fn flag(section: &str, key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(Error::invalid(format!("config: [{section}] {key} = {v:?} is not a boolean"))),
            }
        }
        let path = || (!v.is_empty()).then(|| PathBuf::from(v));
        let m = &mut self.model;
        match (section, key) {
            ("run", "task") => {}
            ("run", "output_strategy") => self.output_strategy = v.parse()?,
            ("run", "seed") => self.seed = num(section, key, v)?,
            ("run", "deterministic") => self.deterministic = flag(section, key, v)?,
            ("model", "vocab_size") => m.vocab_size = num(section, key, v)?,
            ("model", "d_model") => m.d_model = num(section, key, v)?,
            ("model", "n_heads") => m.n_heads = num(section, key, v)?,
            ("model", "d_ff") => m.d_ff = num(section, key, v)?,
            ("model", "n_enc_layers") => m.n_enc_layers = num(section, key, v)?,
            ("model", "n_dec_layers") => m.n_dec_layers = num(section, key, v)?,
            ("model", "max_len") => m.max_len = num(section, key, v)?,
            ("model", "tie_embeddings") => m.tie_embeddings = flag(section, key, v)?,
            ("model", "position_scheme") => {
                m.position_scheme = match v {
                    "absolute" => PositionScheme::LearnedAbsolute,
                    "relative" => PositionScheme::RelativeBucket {
                        num_buckets: 32,
                        max_distance: 128,
                    },
                    _ => return Err(Error::invalid(format!("config: unknown position_scheme {v:?}"))),
                }
            }
            ("model", "num_buckets") | ("model", "max_distance") => {
                let n: usize = num(section, key, v)?;
                match &mut m.position_scheme {
                    PositionScheme::RelativeBucket { num_buckets, max_distance } => {
                        *(if key == "num_buckets" { num_buckets } else { max_distance }) = n;
                    }
                    PositionScheme::LearnedAbsolute => {
                        return Err(Error::invalid(format!("config: {key} needs position_scheme = relative first")))
                    }
                }
            }
            ("optimizer", "name") => self.optimizer = v.to_string(),
            ("optimizer", "lr") => self.lr = num(section, key, v)?,
            ("train", "batch_size") => self.batch_size = num(section, key, v)?,
            ("train", "grad_accum_steps") => self.grad_accum_steps = num(section, key, v)?,
            ("train", "max_epochs") => self.max_epochs = num(section, key, v)?,
            ("train", "patience") => self.patience = num(section, key, v)?,
            ("train", "embeddings_only") => self.embeddings_only = flag(section, key, v)?,
            ("data", "mask_rate") => self.mask_rate = num(section, key, v)?,
            ("ner", "label_language") => self.label_language = v.parse()?,
            ("ner", "window_size") => self.window_size = num(section, key, v)?,
            ("ner", "window_stride") => self.window_stride = num(section, key, v)?,
            ("ner", "beam_width") => self.beam_width = num(section, key, v)?,
            ("ner", "strip_accents") => self.strip_accents = flag(section, key, v)?,
            ("paths", "vocab") => self.paths.vocab = path(),
            ("paths", "train") => self.paths.train = path(),
            ("paths", "valid") => self.paths.valid = path(),
            ("paths", "test") => self.paths.test = path(),
            ("paths", "checkpoint_dir") => self.paths.checkpoint_dir = path(),
            ("paths", "init_checkpoint") => self.paths.init_checkpoint = path(),
            _ => return Err(Error::invalid(format!("config: unknown key [{section}] {key}"))),
        }
        Ok(())
    }
}
