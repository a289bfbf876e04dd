//! Raw text cleanup, sentence splitting and packing of sentences into
//! pretraining documents of at most 512 words.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const DEFAULT_MAX_WORDS: usize = 512;

/// Characters whose UTF-8 bytes, read back as Latin-1, are repaired.
const REPAIRABLE: &str = "ãõáéíóúâêôàçÃÕÁÉÍÓÚÂÊÔÀÇ";

const ABBREVIATIONS: &[&str] = &[
    "sr.", "sra.", "srs.", "sras.", "dr.", "dra.", "drs.", "dras.", "prof.", "profa.", "etc.",
    "e.g.", "i.e.", "av.", "exmo.", "exma.", "sto.", "sta.", "pág.", "p.ex.", "vs.",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    words: Vec<String>,
}

impl Sentence {
    /// Builds a sentence from whitespace-delimited text. Returns `None` for
    /// blank input.
    pub fn from_text(text: &str) -> Option<Self> {
        let words: Vec<String> = text.split_whitespace().map(str::to_owned).collect();
        (!words.is_empty()).then_some(Self { words })
    }

    /// Builds a sentence from words; each word must be non-empty and free of
    /// whitespace.
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::invalid("sentence needs at least one word"));
        }
        if words.iter().any(|w| w.is_empty() || w.chars().any(char::is_whitespace)) {
            return Err(Error::invalid("words must be non-empty and contain no whitespace"));
        }
        Ok(Self { words })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn text(&self) -> String {
        self.words.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PackedDocument {
    sentences: Vec<Sentence>,
    total_words: usize,
}

impl PackedDocument {
    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn total_words(&self) -> usize {
        self.total_words
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().flat_map(|s| s.words.iter().map(String::as_str))
    }

    pub fn text(&self) -> String {
        self.words().collect::<Vec<_>>().join(" ")
    }

    /// Document-file line: sentences separated by tabs.
    pub fn to_line(&self) -> String {
        self.sentences.iter().map(Sentence::text).collect::<Vec<_>>().join("\t")
    }

    /// Parses a [`PackedDocument::to_line`] line; `None` when it holds no words.
    pub fn from_line(line: &str) -> Option<Self> {
        let mut doc = Self::default();
        for s in line.split('\t').filter_map(Sentence::from_text) {
            doc.push(s);
        }
        (doc.total_words > 0).then_some(doc)
    }

    fn push(&mut self, sentence: Sentence) {
        self.total_words += sentence.word_count();
        self.sentences.push(sentence);
    }
}

fn mojibake_table() -> Vec<(String, char)> {
    REPAIRABLE
        .chars()
        .map(|c| {
            let mut buf = [0u8; 4];
            let garbled: String = c.encode_utf8(&mut buf).bytes().map(char::from).collect();
            (garbled, c)
        })
        .collect()
}

fn repair_once(text: &str, table: &[(String, char)]) -> (String, bool) {
    let mut out = String::with_capacity(text.len());
    let mut changed = false;
    let mut rest = text;
    'outer: while let Some(c) = rest.chars().next() {
        if c == 'Ã' {
            for (garbled, fixed) in table {
                if rest.starts_with(garbled.as_str()) {
                    out.push(*fixed);
                    rest = &rest[garbled.len()..];
                    changed = true;
                    continue 'outer;
                }
            }
        }
        out.push(c);
        rest = &rest[c.len_utf8()..];
    }
    (out, changed)
}

/// Repairs Portuguese accents garbled by a UTF-8/Latin-1 mix-up, normalizes
/// line endings to LF, drops NUL characters and collapses runs of non-LF
/// whitespace into single spaces.
pub fn fix_encoding(text: &str) -> String {
    let text = text.replace("\r\n", "\n").replace(['\r'], "\n").replace('\0', "");

    // Repair to a fixpoint so that nested damage ("Ã\u{83}£") is fully undone.
    let table = mojibake_table();
    let mut current = text;
    loop {
        let (next, changed) = repair_once(&current, &table);
        current = next;
        if !changed {
            break;
        }
    }

    let mut out = String::with_capacity(current.len());
    let mut in_space = false;
    for c in current.chars() {
        if c != '\n' && c.is_whitespace() {
            if !in_space {
                out.push(' ');
            }
            in_space = true;
        } else {
            out.push(c);
            in_space = false;
        }
    }
    out
}

fn is_terminal(word: &str) -> bool {
    let core = word.trim_end_matches(['"', '\'', '”', '’', '»', ')', ']']);
    core.ends_with(['.', '!', '?', '…'])
}

fn is_abbreviation(word: &str) -> bool {
    let lower = word.to_lowercase();
    ABBREVIATIONS.contains(&lower.as_str())
}

fn opens_sentence(word: &str) -> bool {
    word.chars()
        .next()
        .is_some_and(|c| c.is_uppercase() || matches!(c, '"' | '“' | '«' | '\'' | '‘' | '(' | '—' | '-'))
}

/// Rule-based sentence splitter. Newlines always end a sentence.
pub fn split_sentences(text: &str) -> Vec<Sentence> {
    let mut sentences = Vec::new();
    for line in text.split('\n') {
        let words: Vec<&str> = line.split_whitespace().collect();
        let mut start = 0;
        for i in 0..words.len() {
            let last = i + 1 == words.len();
            let boundary = last
                || (is_terminal(words[i]) && !is_abbreviation(words[i]) && opens_sentence(words[i + 1]));
            if boundary {
                let chunk = words[start..=i].iter().map(|w| (*w).to_owned()).collect();
                sentences.push(Sentence { words: chunk });
                start = i + 1;
            }
        }
    }
    sentences
}

/// Greedy in-order packing. A sentence that does not fit starts a new
/// document; a sentence longer than `max_words` is truncated and emitted as
/// a document of its own.
pub fn pack_sentences(sentences: &[Sentence], max_words: usize) -> Result<Vec<PackedDocument>> {
    if max_words == 0 {
        return Err(Error::invalid("max_words must be at least 1"));
    }
    let mut docs = Vec::new();
    let mut current = PackedDocument::default();
    for sentence in sentences {
        let n = sentence.word_count();
        if current.total_words + n > max_words && !current.sentences.is_empty() {
            docs.push(std::mem::take(&mut current));
        }
        if n > max_words {
            let mut long = PackedDocument::default();
            long.push(Sentence {
                words: sentence.words[..max_words].to_vec(),
            });
            docs.push(long);
            continue;
        }
        current.push(sentence.clone());
    }
    if !current.sentences.is_empty() {
        docs.push(current);
    }
    Ok(docs)
}

/// Running count / sum / sum-of-squares of words per document. Merging is
/// associative, so shards can be reduced in any grouping.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StatsAccumulator {
    pub n_documents: u64,
    pub n_words: u64,
    pub sum_squares: u128,
}

impl StatsAccumulator {
    pub fn add(&mut self, words: usize) {
        self.n_documents += 1;
        self.n_words += words as u64;
        self.sum_squares += (words as u128) * (words as u128);
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            n_documents: self.n_documents + other.n_documents,
            n_words: self.n_words + other.n_words,
            sum_squares: self.sum_squares + other.sum_squares,
        }
    }

    pub fn finish(&self) -> Result<CorpusStats> {
        if self.n_documents == 0 {
            return Err(Error::EmptyCorpus);
        }
        let n = self.n_documents as f64;
        let mean = self.n_words as f64 / n;
        // Exact integer numerator: n * sum(x^2) - (sum x)^2.
        let num = self.n_documents as u128 * self.sum_squares - (self.n_words as u128).pow(2);
        let std = (num as f64).sqrt() / n;
        Ok(CorpusStats {
            n_documents: self.n_documents,
            n_words: self.n_words,
            mean_words: mean,
            std_words: std,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusStats {
    pub n_documents: u64,
    pub n_words: u64,
    pub mean_words: f64,
    /// Population standard deviation.
    pub std_words: f64,
}

impl CorpusStats {
    pub fn to_report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_documents={}", self.n_documents);
        let _ = writeln!(s, "n_words={}", self.n_words);
        let _ = writeln!(s, "mean_words={}", self.mean_words);
        let _ = writeln!(s, "std_words={}", self.std_words);
        s
    }
}

pub fn corpus_stats(docs: &[PackedDocument]) -> Result<CorpusStats> {
    let mut acc = StatsAccumulator::default();
    for d in docs {
        acc.add(d.total_words());
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(n: usize) -> Sentence {
        Sentence::from_words((0..n).map(|i| format!("w{i}")).collect()).unwrap()
    }

    fn counts(docs: &[PackedDocument]) -> Vec<Vec<usize>> {
        docs.iter()
            .map(|d| d.sentences().iter().map(Sentence::word_count).collect())
            .collect()
    }

    #[test]
    fn repairs_latin1_mojibake() {
        let garbled: String = "São Paulo".bytes().map(char::from).collect();
        assert_eq!(garbled, "SÃ£o Paulo");
        assert_eq!(fix_encoding(&garbled), "São Paulo");
        assert_eq!(fix_encoding("SÃ£o Paulo"), "São Paulo");
    }

    #[test]
    fn every_table_entry_round_trips() {
        for c in REPAIRABLE.chars() {
            let clean = format!("x{c}y");
            let garbled: String = clean.bytes().map(char::from).collect();
            assert_eq!(fix_encoding(&garbled), clean, "char {c}");
        }
    }

    #[test]
    fn clean_text_is_identity() {
        assert_eq!(fix_encoding("plain ascii"), "plain ascii");
        assert_eq!(fix_encoding("ação é útil"), "ação é útil");
    }

    #[test]
    fn line_endings_and_spaces() {
        assert_eq!(fix_encoding("a\r\nb"), "a\nb");
        assert_eq!(fix_encoding("a\rb"), "a\nb");
        assert_eq!(fix_encoding("a \t  b\n\nc"), "a b\n\nc");
        assert_eq!(fix_encoding("a\0b"), "ab");
    }

    #[test]
    fn nested_damage_is_fully_repaired() {
        // "Ã" itself garbled, followed by the tail of a garbled "ã".
        assert_eq!(fix_encoding("\u{C3}\u{83}\u{A3}"), "ã");
        assert_eq!(fix_encoding(&fix_encoding("\u{C3}\u{83}\u{A3}")), "ã");
    }

    #[test]
    fn splits_on_terminal_punctuation() {
        let s: Vec<String> = split_sentences("Olá. Tudo bem?").iter().map(Sentence::text).collect();
        assert_eq!(s, ["Olá.", "Tudo bem?"]);
    }

    #[test]
    fn abbreviation_guard() {
        let s: Vec<String> = split_sentences("Dr. Silva chegou.").iter().map(Sentence::text).collect();
        assert_eq!(s, ["Dr. Silva chegou."]);
        let s = split_sentences("Chegou a Sra. Ana. Ela riu.");
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn newline_is_a_boundary() {
        let s: Vec<String> = split_sentences("a\nb").iter().map(Sentence::text).collect();
        assert_eq!(s, ["a", "b"]);
        assert!(split_sentences("\n\n  \n").is_empty());
    }

    #[test]
    fn lowercase_continuation_does_not_split() {
        assert_eq!(split_sentences("Custa 3.5 reais. ok então").len(), 1);
        assert_eq!(split_sentences("Ele disse. \"Vamos!\" E foi.").len(), 3);
    }

    #[test]
    fn packing_examples() {
        let docs = pack_sentences(&[sent(300), sent(300), sent(100)], 512).unwrap();
        assert_eq!(counts(&docs), vec![vec![300], vec![300, 100]]);

        let docs = pack_sentences(&[sent(600)], 512).unwrap();
        assert_eq!(counts(&docs), vec![vec![512]]);

        let docs = pack_sentences(&[sent(512), sent(1)], 512).unwrap();
        assert_eq!(counts(&docs), vec![vec![512], vec![1]]);

        assert!(pack_sentences(&[], 512).unwrap().is_empty());
        assert!(pack_sentences(&[sent(1)], 0).is_err());
    }

    #[test]
    fn long_sentence_flushes_current_document() {
        let docs = pack_sentences(&[sent(10), sent(20), sent(5)], 15).unwrap();
        assert_eq!(counts(&docs), vec![vec![10], vec![15], vec![5]]);
    }

    #[test]
    fn stats_examples() {
        let mk = |counts: &[usize]| -> Vec<PackedDocument> {
            counts.iter().map(|&n| pack_sentences(&[sent(n)], 512).unwrap().remove(0)).collect()
        };
        let s = corpus_stats(&mk(&[360, 360])).unwrap();
        assert_eq!(s.mean_words, 360.0);
        assert_eq!(s.std_words, 0.0);

        let s = corpus_stats(&mk(&[100, 300])).unwrap();
        assert_eq!((s.n_documents, s.n_words), (2, 400));
        assert_eq!(s.mean_words, 200.0);
        assert_eq!(s.std_words, 100.0);

        assert!(matches!(corpus_stats(&[]), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn report_format() {
        let s = corpus_stats(&[pack_sentences(&[sent(4)], 512).unwrap().remove(0)]).unwrap();
        assert_eq!(s.to_report(), "n_documents=1\nn_words=4\nmean_words=4\nstd_words=0\n");
    }
}
