//! Sentence-pair and NER records, their text-to-text encodings, and the
//! TSV / CoNLL readers.
//!
//! Sentence-pair TSV: UTF-8, tab-separated, first line is the header
//! `id  sentence1  sentence2  similarity  entailment` (column order free,
//! the last two optional, empty cells allowed). Similarity is a decimal in
//! [1, 5]; entailment is `entail` or `none`.
//!
//! NER CoNLL: one `word<TAB>tag` line per word with BIO tags over
//! PER/ORG/LOC/VAL/DAT, a blank line between documents, and an optional
//! `# id` comment line naming the next document.

use std::fmt::Write as _;

use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::ner::{validate_bio, Bio, LabelLanguage};
use crate::unigram::{TokenSequence, UnigramVocab, EOS_ID};

pub const ASSIN_PREFIX_1: &str = "ASSIN sentence1: ";
pub const ASSIN_PREFIX_2: &str = "sentence2: ";
pub const NER_PREFIX: &str = "Recognize Entities: ";
/// Generated score strings are cut to this many tokens before parsing.
pub const SCORE_MAX_TOKENS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Entailment {
    Entail,
    None,
}

impl Entailment {
    pub fn index(self) -> usize {
        match self {
            Entailment::Entail => 0,
            Entailment::None => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Entailment::Entail
        } else {
            Entailment::None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Entailment::Entail => "entail",
            Entailment::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "entail" | "entailment" => Ok(Entailment::Entail),
            "none" => Ok(Entailment::None),
            other => Err(Error::Format(format!("unknown entailment label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentencePairExample {
    pub id: String,
    pub sentence1: String,
    pub sentence2: String,
    pub similarity: Option<f64>,
    pub entailment: Option<Entailment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NerExample {
    pub doc_id: String,
    pub words: Vec<String>,
    pub tags: Vec<Bio>,
}

/// The two text segments of a sentence pair; each is followed by an
/// end-of-sequence id when encoded.
pub fn format_assin_pair(s1: &str, s2: &str) -> [String; 2] {
    [format!("{ASSIN_PREFIX_1}{s1}"), format!("{ASSIN_PREFIX_2}{s2}")]
}

/// Encodes each segment and appends end-of-sequence after it.
pub fn encode_segments<S: AsRef<str>>(vocab: &UnigramVocab, segments: &[S]) -> TokenSequence {
    let mut ids = Vec::new();
    for s in segments {
        ids.extend(vocab.encode(s.as_ref()));
        ids.push(EOS_ID);
    }
    ids
}

pub fn encode_assin_pair(vocab: &UnigramVocab, s1: &str, s2: &str) -> TokenSequence {
    encode_segments(vocab, &format_assin_pair(s1, s2))
}

pub fn format_ner_input<S: AsRef<str>>(words: &[S]) -> String {
    let mut out = String::from(NER_PREFIX);
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(w.as_ref());
    }
    out
}

pub fn encode_ner_input<S: AsRef<str>>(vocab: &UnigramVocab, words: &[S]) -> TokenSequence {
    encode_segments(vocab, &[format_ner_input(words)])
}

/// Score printed with one decimal digit, ties rounded to even.
pub fn render_score(score: f64) -> Result<String> {
    if !(1.0..=5.0).contains(&score) {
        return Err(Error::invalid(format!("similarity score {score} outside [1, 5]")));
    }
    Ok(format!("{score:.1}"))
}

pub fn make_similarity_target(vocab: &UnigramVocab, score: f64) -> Result<TokenSequence> {
    let text = render_score(score)?;
    Ok(encode_segments(vocab, &[text]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParsedScore {
    pub value: f64,
    /// No number was found; `value` is the midpoint 3.0.
    pub failed: bool,
}

/// First decimal number in `text` (comma accepted as decimal separator),
/// clamped to [1, 5].
pub fn parse_score_text(text: &str) -> ParsedScore {
    let text = text.replace(',', ".");
    let chars: Vec<char> = text.chars().collect();
    let Some(start) = chars.iter().position(|c| c.is_ascii_digit()) else {
        return ParsedScore {
            value: 3.0,
            failed: true,
        };
    };
    let mut end = start;
    while end < chars.len() && chars[end].is_ascii_digit() {
        end += 1;
    }
    if end + 1 < chars.len() && chars[end] == '.' && chars[end + 1].is_ascii_digit() {
        end += 1;
        while end < chars.len() && chars[end].is_ascii_digit() {
            end += 1;
        }
    }
    let number: String = chars[start..end].iter().collect();
    let value: f64 = number.parse().expect("digits with an optional fraction");
    ParsedScore {
        value: value.clamp(1.0, 5.0),
        failed: false,
    }
}

/// Decodes at most [`SCORE_MAX_TOKENS`] generated ids (stopping at
/// end-of-sequence) and parses the score.
pub fn parse_score_string(generated: &[u32], vocab: &UnigramVocab) -> ParsedScore {
    let cut = &generated[..generated.len().min(SCORE_MAX_TOKENS)];
    match vocab.decode_until_eos(cut) {
        Ok(text) => parse_score_text(&text),
        Err(_) => ParsedScore {
            value: 3.0,
            failed: true,
        },
    }
}

/// Generation target for NER: each entity followed by `[Class]`, each
/// maximal run of non-entity words followed by the non-entity label.
pub fn build_ner_target<S: AsRef<str>>(words: &[S], tags: &[Bio], lang: LabelLanguage) -> Result<String> {
    if words.len() != tags.len() {
        return Err(Error::LengthMismatch {
            left: words.len(),
            right: tags.len(),
        });
    }
    validate_bio(tags)?;
    let mut out = String::new();
    for (i, (w, &t)) in words.iter().zip(tags).enumerate() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(w.as_ref());
        let run_ends = match tags.get(i + 1) {
            None => true,
            Some(&next) => match t {
                Bio::O => next != Bio::O,
                Bio::B(c) | Bio::I(c) => next != Bio::I(c),
            },
        };
        if run_ends {
            let _ = write!(out, " [{}]", lang.label(t.class()));
        }
    }
    Ok(out)
}

/// Canonical decomposition, combining marks removed, recomposed.
pub fn strip_accents(text: &str) -> String {
    text.nfd().filter(|&c| !is_combining_mark(c)).nfc().collect()
}

/// Window start offsets for a sequence of `len` items.
pub fn window_offsets(len: usize, size: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 || size <= stride {
        return Err(Error::invalid(format!("window size {size} must exceed stride {stride} > 0")));
    }
    if len <= size {
        return Ok(vec![0]);
    }
    let mut offsets: Vec<usize> = (0..).map(|k| k * stride).take_while(|&o| o + size < len).collect();
    offsets.push(len - size);
    Ok(offsets)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedExample {
    pub parent: String,
    pub offset: usize,
    pub ids: TokenSequence,
}

pub fn sliding_windows(parent: &str, ids: &[u32], size: usize, stride: usize) -> Result<Vec<WindowedExample>> {
    Ok(window_offsets(ids.len(), size, stride)?
        .into_iter()
        .map(|offset| WindowedExample {
            parent: parent.to_string(),
            offset,
            ids: ids[offset..(offset + size).min(ids.len())].to_vec(),
        })
        .collect())
}

pub fn read_pairs_tsv(text: &str) -> Result<Vec<SentencePairExample>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Format("missing TSV header".into()))?;
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    let col = |name: &str| cols.iter().position(|&c| c == name);
    let (Some(ci), Some(c1), Some(c2)) = (col("id"), col("sentence1"), col("sentence2")) else {
        return Err(Error::Format("TSV header needs id, sentence1 and sentence2".into()));
    };
    let (cs, ce) = (col("similarity"), col("entailment"));
    let mut out = Vec::new();
    for (n, line) in lines {
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != cols.len() {
            return Err(Error::Format(format!(
                "line {}: expected {} fields, found {}",
                n + 1,
                cols.len(),
                cells.len()
            )));
        }
        let cell = |c: Option<usize>| c.map(|c| cells[c].trim()).filter(|s| !s.is_empty());
        let similarity = cell(cs)
            .map(|s| {
                s.replace(',', ".")
                    .parse::<f64>()
                    .ok()
                    .filter(|v| (1.0..=5.0).contains(v))
                    .ok_or_else(|| Error::Format(format!("line {}: bad similarity {s:?}", n + 1)))
            })
            .transpose()?;
        let entailment = cell(ce).map(Entailment::parse).transpose()?;
        out.push(SentencePairExample {
            id: cells[ci].trim().to_string(),
            sentence1: cells[c1].to_string(),
            sentence2: cells[c2].to_string(),
            similarity,
            entailment,
        });
    }
    Ok(out)
}

pub fn write_pairs_tsv(examples: &[SentencePairExample]) -> String {
    let mut out = String::from("id\tsentence1\tsentence2\tsimilarity\tentailment\n");
    for e in examples {
        let sim = e.similarity.map(|s| s.to_string()).unwrap_or_default();
        let ent = e.entailment.map(|e| e.as_str()).unwrap_or_default();
        let _ = writeln!(out, "{}\t{}\t{}\t{sim}\t{ent}", e.id, e.sentence1, e.sentence2);
    }
    out
}

pub fn read_conll(text: &str) -> Result<Vec<NerExample>> {
    let mut docs = Vec::new();
    let mut cur = NerExample {
        doc_id: String::new(),
        words: Vec::new(),
        tags: Vec::new(),
    };
    let flush = |cur: &mut NerExample, docs: &mut Vec<NerExample>| -> Result<()> {
        if cur.words.is_empty() {
            return Ok(());
        }
        validate_bio(&cur.tags)?;
        let mut doc = std::mem::replace(
            cur,
            NerExample {
                doc_id: String::new(),
                words: Vec::new(),
                tags: Vec::new(),
            },
        );
        if doc.doc_id.is_empty() {
            doc.doc_id = format!("doc{}", docs.len());
        }
        docs.push(doc);
        Ok(())
    };
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut cur, &mut docs)?;
        } else if let Some(id) = line.strip_prefix('#') {
            flush(&mut cur, &mut docs)?;
            cur.doc_id = id.trim().to_string();
        } else {
            let (word, tag) = line
                .rsplit_once(['\t', ' '])
                .ok_or_else(|| Error::Format(format!("line {}: expected word and tag", n + 1)))?;
            let word = word.trim();
            if word.is_empty() {
                return Err(Error::Format(format!("line {}: empty word", n + 1)));
            }
            cur.words.push(word.to_string());
            cur.tags.push(tag.trim().parse()?);
        }
    }
    flush(&mut cur, &mut docs)?;
    Ok(docs)
}

pub fn write_conll(docs: &[NerExample]) -> String {
    let mut out = String::new();
    for d in docs {
        let _ = writeln!(out, "# {}", d.doc_id);
        for (w, t) in d.words.iter().zip(&d.tags) {
            let _ = writeln!(out, "{w}\t{t}");
        }
        out.push('\n');
    }
    out
}
