//! wasm-bindgen surface for the browser playground in `www/`.

use ptkit::denoise::{mask_tokens, CorruptionConfig};
use ptkit::ner::{parse_tagged_output, to_bio};
use ptkit::unigram::{train_vocab, TrainerConfig, UnigramVocab};
use wasm_bindgen::prelude::*;

/// A vocabulary trained in the page from user text.
#[wasm_bindgen]
pub struct Playground {
    vocab: UnigramVocab,
}

#[wasm_bindgen]
impl Playground {
    /// Trains a vocabulary of `vocab_size` pieces on the lines of `corpus`.
    #[wasm_bindgen(constructor)]
    pub fn new(corpus: &str, vocab_size: usize) -> Result<Playground, String> {
        let lines: Vec<&str> = corpus.lines().filter(|l| !l.trim().is_empty()).collect();
        let cfg = TrainerConfig {
            vocab_size,
            ..TrainerConfig::default()
        };
        let vocab = train_vocab(&lines, &cfg).map_err(|e| e.to_string())?;
        Ok(Playground { vocab })
    }

    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.vocab.len()
    }

    /// Vocabulary file contents.
    pub fn vocab_file(&self) -> String {
        self.vocab.to_file_string()
    }

    /// Best segmentation, one `piece<TAB>id<TAB>log_prob` line per token.
    pub fn segment(&self, text: &str) -> String {
        self.vocab
            .encode(text)
            .iter()
            .map(|&id| {
                let piece = self.vocab.piece(id).unwrap_or("?");
                format!("{piece}\t{id}\t{:.4}\n", self.vocab.log_prob(id))
            })
            .collect()
    }

    /// Masked input and denoising target as two lines of pieces.
    pub fn mask(&self, text: &str, rate: f64, seed: u32) -> Result<String, String> {
        let cfg = CorruptionConfig {
            mask_rate: rate,
            ..CorruptionConfig::default()
        };
        let ids = self.vocab.encode(text);
        let pair = mask_tokens(&ids, &cfg, seed as u64).map_err(|e| e.to_string())?;
        let show = |ids: &[u32]| -> String {
            ids.iter()
                .map(|&i| self.vocab.piece(i).unwrap_or("?"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        Ok(format!("input:  {}\ntarget: {}\n", show(&pair.input_ids), show(&pair.target_ids)))
    }
}

/// Aligns tagged model output to the words of `sentence`, one
/// `word<TAB>tag` line per word, followed by any parser flags.
#[wasm_bindgen]
pub fn ner_to_bio(tagged: &str, sentence: &str) -> String {
    let words: Vec<&str> = sentence.split_whitespace().collect();
    let parsed = parse_tagged_output(tagged);
    let (tags, surplus) = to_bio(&parsed.segments, words.len());
    let mut out: String = words.iter().zip(&tags).map(|(w, t)| format!("{w}\t{t}\n")).collect();
    if parsed.dangling {
        out += "# words after the last label were read as Other\n";
    }
    if parsed.unknown_labels > 0 {
        out += &format!("# {} unknown label(s) read as Other\n", parsed.unknown_labels);
    }
    if surplus > 0 {
        out += &format!("# {surplus} generated word(s) beyond the sentence dropped\n");
    }
    out
}
