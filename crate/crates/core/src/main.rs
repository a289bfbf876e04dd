use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ptkit::config::RunConfig;
use ptkit::corpus::{corpus_stats, fix_encoding, pack_sentences, split_sentences, PackedDocument, DEFAULT_MAX_WORDS};
use ptkit::denoise::{make_pretrain_batch, save_cache, CorruptionConfig};
use ptkit::model::decode::beam_decode;
use ptkit::model::Checkpoint;
use ptkit::train::{run_evaluate, run_finetune, run_pretrain, Trained, CHECKPOINT_FILE};
use ptkit::unigram::{train_vocab, TrainerConfig, UnigramVocab, EOS_ID};
use ptkit::{Error, Result};

#[derive(Parser)]
#[command(name = "ptkit", version, about = "Text-to-text pretraining and fine-tuning at desk scale")]
struct Cli {
    /// Run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Timestamp-free logs for byte-identical reruns.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Repair, sentence-split and pack raw text into a document file
    /// (one document per line, sentences separated by tabs).
    Preprocess {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_WORDS)]
        max_words: usize,
        /// Where to write corpus statistics; stderr otherwise.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Train a Unigram vocabulary on a document file.
    TrainVocab {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Final size including the four control tokens.
        #[arg(long, default_value_t = 32000)]
        vocab_size: usize,
        #[arg(long, default_value_t = 8)]
        max_piece_chars: usize,
    },
    /// Tokenize and mask a document file into a DNPZ cache.
    MakePretrainData {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 512)]
        max_len: usize,
        #[arg(long, default_value_t = 0.15)]
        mask_rate: f64,
    },
    /// Denoising pretraining as described by --config.
    Pretrain,
    /// Task fine-tuning as described by --config.
    Finetune,
    /// Score a checkpoint on a data split.
    Evaluate {
        /// Defaults to the checkpoint in the configured checkpoint_dir.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Report destination; stdout otherwise.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Per-item predictions file.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Generate output text for each input line.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Input lines; `-` reads stdin.
        #[arg(long, default_value = "-")]
        input: String,
        #[arg(long, default_value_t = 5)]
        beam: usize,
        #[arg(long, default_value_t = 64)]
        max_out: usize,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path.display(), e))
}

fn read_documents(path: &Path) -> Result<Vec<PackedDocument>> {
    Ok(read(path)?.lines().filter_map(PackedDocument::from_line).collect())
}

fn run_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("this command needs --config".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.deterministic |= cli.deterministic;
    Ok(cfg)
}

fn summarize(t: &Trained) {
    if let Some(last) = t.log.records.last() {
        eprintln!(
            "epochs={} last_train_loss={:.6} best_epoch={}",
            last.epoch,
            last.train_loss,
            t.log.best_epoch.map_or("-".into(), |b| b.to_string())
        );
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Preprocess {
            input,
            output,
            max_words,
            stats,
        } => {
            let mut sentences = Vec::new();
            for p in input {
                sentences.extend(split_sentences(&fix_encoding(&read(p)?)));
            }
            let docs = pack_sentences(&sentences, *max_words)?;
            let mut text = String::new();
            for d in &docs {
                text += &d.to_line();
                text.push('\n');
            }
            write(output, &text)?;
            let report = corpus_stats(&docs)?.to_report();
            match stats {
                Some(p) => write(p, &report),
                None => {
                    eprint!("{report}");
                    Ok(())
                }
            }
        }
        Command::TrainVocab {
            input,
            output,
            vocab_size,
            max_piece_chars,
        } => {
            let docs: Vec<String> = read_documents(input)?
                .iter()
                .flat_map(|d| d.sentences().iter().map(|s| s.text()).collect::<Vec<_>>())
                .collect();
            let cfg = TrainerConfig {
                vocab_size: *vocab_size,
                max_piece_chars: *max_piece_chars,
                ..TrainerConfig::default()
            };
            train_vocab(&docs, &cfg)?.save(output)
        }
        Command::MakePretrainData {
            vocab,
            input,
            output,
            max_len,
            mask_rate,
        } => {
            let vocab = UnigramVocab::load(vocab)?;
            let docs = read_documents(input)?;
            let cfg = CorruptionConfig {
                mask_rate: *mask_rate,
                max_len: *max_len,
                seed: cli.seed.unwrap_or(0),
                ..CorruptionConfig::default()
            };
            let pairs = make_pretrain_batch(&docs, &vocab, &cfg)?;
            let max_len = u32::try_from(*max_len).map_err(|_| Error::InvalidArgument("max_len too large".into()))?;
            save_cache(output, &pairs, max_len)
        }
        Command::Pretrain => {
            summarize(&run_pretrain(&run_config(cli)?)?);
            Ok(())
        }
        Command::Finetune => {
            summarize(&run_finetune(&run_config(cli)?)?);
            Ok(())
        }
        Command::Evaluate {
            checkpoint,
            split,
            output,
            predictions,
        } => {
            let cfg = run_config(cli)?;
            let ckpt = match checkpoint {
                Some(p) => p.clone(),
                None => cfg
                    .paths
                    .checkpoint_dir
                    .as_ref()
                    .map(|d| d.join(CHECKPOINT_FILE))
                    .ok_or_else(|| Error::InvalidArgument("pass --checkpoint or set [paths] checkpoint_dir".into()))?,
            };
            let eval = run_evaluate(&cfg, &ckpt, split)?;
            if let Some(p) = predictions {
                write(p, &eval.predictions)?;
            }
            match output {
                Some(p) => write(p, &eval.report),
                None => {
                    print!("{}", eval.report);
                    Ok(())
                }
            }
        }
        Command::Decode {
            checkpoint,
            vocab,
            input,
            beam,
            max_out,
        } => {
            let vocab = UnigramVocab::load(vocab)?;
            let (model, _) = Checkpoint::load(checkpoint)?.into_model()?;
            let text = if input == "-" {
                let mut s = String::new();
                std::io::stdin()
                    .read_to_string(&mut s)
                    .map_err(|e| Error::io("stdin", e))?;
                s
            } else {
                read(Path::new(input))?
            };
            for line in text.lines() {
                let mut ids = vocab.encode(line);
                ids.push(EOS_ID);
                ids.truncate(model.config().max_len);
                let out = beam_decode(&model, &ids, *beam, *max_out)?;
                println!("{}", vocab.decode_until_eos(&out)?);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
