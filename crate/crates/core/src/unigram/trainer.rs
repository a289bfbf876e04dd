//! EM training of the Unigram model: frequent-substring seeding,
//! forward-backward re-estimation and likelihood-based pruning.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::lattice::SegmentationLattice;
use super::vocab::{normalize, split_chunks, UnigramVocab, NUM_RESERVED, SPACE_MARKER};
use crate::error::{Error, Result};

/// Floor applied to expected counts before taking logs in the M-step.
const MIN_COUNT: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    /// Final size, control tokens included.
    pub vocab_size: usize,
    /// Number of scored seed pieces; defaults to ten times `vocab_size`.
    pub seed_size: Option<usize>,
    pub max_piece_chars: usize,
    pub em_iters_per_round: usize,
    pub shrink_factor: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            vocab_size: 32_000,
            seed_size: None,
            max_piece_chars: 8,
            em_iters_per_round: 2,
            shrink_factor: 0.75,
        }
    }
}

/// Training text reduced to unique chunks (a boundary marker plus the
/// following word) with their multiplicities, in sorted order.
#[derive(Debug, Clone)]
pub struct TrainingCorpus {
    chunks: Vec<(Vec<char>, f64)>,
}

impl TrainingCorpus {
    pub fn new<S: AsRef<str>>(sentences: &[S]) -> Self {
        let mut counts: BTreeMap<Vec<char>, u64> = BTreeMap::new();
        for s in sentences {
            for chunk in split_chunks(&normalize(s.as_ref())) {
                *counts.entry(chunk).or_default() += 1;
            }
        }
        Self {
            chunks: counts.into_iter().map(|(c, n)| (c, n as f64)).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Distinct characters that may become pieces.
    pub fn characters(&self) -> BTreeSet<char> {
        self.chunks
            .iter()
            .flat_map(|(c, _)| c.iter().copied())
            .filter(|c| !matches!(c, '\t' | '\n'))
            .collect()
    }

    /// Total log-likelihood under `vocab`.
    pub fn log_likelihood(&self, vocab: &UnigramVocab) -> f64 {
        self.chunks
            .iter()
            .map(|(chars, w)| w * SegmentationLattice::build(vocab, chars).log_partition())
            .sum()
    }

    /// One EM iteration. Returns the re-estimated vocabulary and the
    /// log-likelihood under the input vocabulary.
    pub fn em_step(&self, vocab: &UnigramVocab) -> (UnigramVocab, f64) {
        let mut counts = vec![0.0; vocab.len()];
        let mut ll = 0.0;
        for (chars, w) in &self.chunks {
            let lattice = SegmentationLattice::build(vocab, chars);
            ll += w * lattice.accumulate_expected_counts(*w, &mut counts);
        }
        let scored = &counts[NUM_RESERVED..];
        let total: f64 = scored.iter().map(|c| c.max(MIN_COUNT)).sum();
        let pieces = vocab
            .scored_pieces()
            .iter()
            .zip(scored)
            .map(|((p, _), c)| (p.clone(), (c.max(MIN_COUNT) / total).ln()))
            .collect();
        (UnigramVocab::from_pieces(pieces).expect("same pieces as input"), ll)
    }

    fn viterbi_usage(&self, vocab: &UnigramVocab) -> Vec<f64> {
        let mut freq = vec![0.0; vocab.len()];
        for (chars, w) in &self.chunks {
            for id in SegmentationLattice::build(vocab, chars).viterbi().0 {
                freq[id as usize] += w;
            }
        }
        freq
    }
}

fn substring_ok(s: &[char]) -> bool {
    !s.iter().any(|c| matches!(c, '\t' | '\n')) && !s[1..].contains(&SPACE_MARKER)
}

/// Seed vocabulary: every character plus the most frequent substrings of up
/// to `max_piece_chars` characters, ranked by frequency times length.
pub fn build_seed_vocab<S: AsRef<str>>(sentences: &[S], seed_size: usize) -> Result<UnigramVocab> {
    seed_from_corpus(&TrainingCorpus::new(sentences), seed_size, 8)
}

pub(crate) fn seed_from_corpus(
    corpus: &TrainingCorpus,
    seed_size: usize,
    max_piece_chars: usize,
) -> Result<UnigramVocab> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let chars = corpus.characters();
    if seed_size < chars.len() {
        return Err(Error::invalid(format!(
            "seed size {seed_size} is below the {} distinct characters",
            chars.len()
        )));
    }
    let reserved: BTreeSet<&str> = ["<pad>", "</s>", "<unk>", "<M>"].into();
    let mut freq: HashMap<String, f64> = HashMap::new();
    for (word, w) in &corpus.chunks {
        for i in 0..word.len() {
            for j in i + 1..=word.len().min(i + max_piece_chars) {
                let sub = &word[i..j];
                if substring_ok(sub) {
                    *freq.entry(sub.iter().collect()).or_default() += w;
                }
            }
        }
    }
    freq.retain(|k, _| !reserved.contains(k.as_str()));

    let mut singles: Vec<(String, f64)> = Vec::new();
    let mut multi: Vec<(String, f64, usize)> = Vec::new();
    for (piece, f) in freq {
        let len = piece.chars().count();
        if len == 1 {
            singles.push((piece, f));
        } else {
            multi.push((piece, f, len));
        }
    }
    multi.sort_by(|a, b| {
        (b.1 * b.2 as f64)
            .total_cmp(&(a.1 * a.2 as f64))
            .then_with(|| a.0.cmp(&b.0))
    });
    multi.truncate(seed_size.saturating_sub(singles.len()));

    let mut pieces: Vec<(String, f64)> = singles;
    pieces.extend(multi.into_iter().map(|(p, f, _)| (p, f)));
    pieces.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let total: f64 = pieces.iter().map(|(_, f)| f).sum();
    UnigramVocab::from_pieces(pieces.into_iter().map(|(p, f)| (p, (f / total).ln())).collect())
}

/// One EM iteration over raw sentences.
pub fn em_step<S: AsRef<str>>(sentences: &[S], vocab: &UnigramVocab) -> (UnigramVocab, f64) {
    TrainingCorpus::new(sentences).em_step(vocab)
}

/// Shrinks `vocab` to exactly `target_size` entries (control tokens
/// included), dropping the multi-character pieces whose removal costs the
/// least Viterbi log-likelihood, `shrink_factor` of the vocabulary per round.
pub fn prune_vocab<S: AsRef<str>>(
    sentences: &[S],
    vocab: &UnigramVocab,
    target_size: usize,
    shrink_factor: f64,
) -> Result<UnigramVocab> {
    prune_with(&TrainingCorpus::new(sentences), vocab, target_size, shrink_factor, 2)
}

pub(crate) fn prune_with(
    corpus: &TrainingCorpus,
    vocab: &UnigramVocab,
    target_size: usize,
    shrink_factor: f64,
    em_iters: usize,
) -> Result<UnigramVocab> {
    let n_single = vocab.scored_pieces().iter().filter(|(p, _)| p.chars().count() == 1).count();
    if target_size < n_single + NUM_RESERVED {
        return Err(Error::invalid(format!(
            "target size {target_size} is below {} characters plus {NUM_RESERVED} control tokens",
            n_single
        )));
    }
    if !(shrink_factor > 0.0 && shrink_factor < 1.0) {
        return Err(Error::invalid("shrink factor must lie in (0, 1)"));
    }
    if vocab.len() <= target_size {
        return Ok(vocab.clone());
    }
    let mut vocab = vocab.clone();
    while vocab.len() > target_size {
        for _ in 0..em_iters.max(2) {
            vocab = corpus.em_step(&vocab).0;
        }
        let next = target_size.max((vocab.len() as f64 * shrink_factor) as usize);
        let drop: BTreeSet<u32> = removal_order(corpus, &vocab)
            .into_iter()
            .take(vocab.len() - next)
            .collect();
        let kept = vocab
            .scored_pieces()
            .iter()
            .enumerate()
            .filter(|(i, _)| !drop.contains(&((i + NUM_RESERVED) as u32)))
            .map(|(_, p)| p.clone())
            .collect();
        vocab = UnigramVocab::from_pieces(kept)?;
    }
    for _ in 0..em_iters {
        vocab = corpus.em_step(&vocab).0;
    }
    Ok(vocab)
}

/// Multi-character piece ids ordered from least to most useful. The loss of
/// a piece is the drop in Viterbi log-likelihood when its occurrences are
/// re-segmented with the remaining pieces.
fn removal_order(corpus: &TrainingCorpus, vocab: &UnigramVocab) -> Vec<u32> {
    let freq = corpus.viterbi_usage(vocab);
    let sum: f64 = freq.iter().sum();
    let log_sum = sum.ln();
    let mut scored: Vec<(f64, u32)> = Vec::new();
    for (i, (piece, _)) in vocab.scored_pieces().iter().enumerate() {
        let id = (i + NUM_RESERVED) as u32;
        let chars: Vec<char> = piece.chars().collect();
        if chars.len() < 2 {
            continue;
        }
        let f = freq[id as usize];
        let loss = if f == 0.0 {
            0.0
        } else {
            let alt = SegmentationLattice::build_filtered(vocab, &chars, |p| p != id).viterbi().0;
            let log_sum_alt = (sum + f * (alt.len() as f64 - 1.0)).ln();
            let lp = f.ln() - log_sum;
            let lp_alt: f64 = alt
                .iter()
                .map(|&a| (freq[a as usize] + f).ln() - log_sum_alt)
                .sum();
            f * (lp - lp_alt)
        };
        scored.push((loss, id));
    }
    scored.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| vocab.piece(a.1).cmp(&vocab.piece(b.1)))
    });
    scored.into_iter().map(|(_, id)| id).collect()
}

/// Seed, re-estimate and prune down to `cfg.vocab_size` entries. The result
/// depends only on the corpus contents and the configuration.
pub fn train_vocab<S: AsRef<str>>(sentences: &[S], cfg: &TrainerConfig) -> Result<UnigramVocab> {
    let corpus = TrainingCorpus::new(sentences);
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let n_chars = corpus.characters().len();
    if cfg.vocab_size < n_chars + NUM_RESERVED {
        return Err(Error::invalid(format!(
            "vocab size {} is below {n_chars} characters plus {NUM_RESERVED} control tokens",
            cfg.vocab_size
        )));
    }
    let seed_size = cfg.seed_size.unwrap_or(cfg.vocab_size * 10).max(n_chars);
    let mut vocab = seed_from_corpus(&corpus, seed_size, cfg.max_piece_chars)?;
    for _ in 0..cfg.em_iters_per_round {
        vocab = corpus.em_step(&vocab).0;
    }
    prune_with(&corpus, &vocab, cfg.vocab_size, cfg.shrink_factor, cfg.em_iters_per_round)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids_of(v: &UnigramVocab) -> Vec<&str> {
        v.scored_pieces().iter().map(|(p, _)| p.as_str()).collect()
    }

    #[test]
    fn seed_examples() {
        let v = build_seed_vocab(&["aa"], 3).unwrap();
        assert!(v.id_of("a").is_some() && v.id_of("aa").is_some());

        let corpus = TrainingCorpus::new(&["ab", "ab"]);
        assert_eq!(corpus.chunks, vec![(vec!['a', 'b'], 2.0)]);
        let v = build_seed_vocab(&["ab", "ab"], 4).unwrap();
        // a, b and ab each occur twice.
        let ab = v.id_of("ab").unwrap();
        assert!((v.log_prob(ab) - (2.0f64 / 6.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn seed_size_below_characters_is_an_error() {
        assert!(build_seed_vocab(&["abc"], 2).is_err());
        assert!(matches!(build_seed_vocab::<&str>(&[], 2), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn seed_never_spans_a_marker() {
        let v = build_seed_vocab(&["ab cd ab"], 100).unwrap();
        for p in ids_of(&v) {
            assert!(!p.chars().skip(1).any(|c| c == SPACE_MARKER), "{p}");
        }
        assert!(v.id_of("▁cd").is_some());
    }

    #[test]
    fn em_single_segmentation() {
        let v = UnigramVocab::from_pieces(vec![("a".into(), 0.0)]).unwrap();
        let (next, ll) = em_step(&["aaa"], &v);
        assert_eq!(ll, 0.0);
        assert_eq!(next, v);
    }

    #[test]
    fn em_two_path_posterior() {
        let v = UnigramVocab::from_pieces(vec![("a".into(), 0.5f64.ln()), ("aa".into(), 0.5f64.ln())]).unwrap();
        let corpus = TrainingCorpus::new(&["aa"]);
        let mut counts = vec![0.0; v.len()];
        let lat = SegmentationLattice::build(&v, &['a', 'a']);
        let z = lat.accumulate_expected_counts(1.0, &mut counts);
        assert!((z - 0.75f64.ln()).abs() < 1e-15);
        // P(aa) = .5/.75 = 2/3, P(a,a) = .25/.75 = 1/3 contributing two "a".
        assert!((counts[5] - 2.0 / 3.0).abs() < 1e-15);
        assert!((counts[4] - 2.0 / 3.0).abs() < 1e-15);
        let (next, ll) = corpus.em_step(&v);
        assert!((ll - 0.75f64.ln()).abs() < 1e-15);
        assert!((next.log_prob(4) - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn prune_noop_at_target() {
        let v = build_seed_vocab(&["abc abd"], 20).unwrap();
        let same = prune_vocab(&["abc abd"], &v, v.len(), 0.75).unwrap();
        assert_eq!(same, v);
    }

    #[test]
    fn unused_piece_goes_first() {
        let v = UnigramVocab::from_pieces(vec![
            ("x".into(), -1.5),
            ("y".into(), -1.5),
            ("ab".into(), -1.0),
            ("a".into(), -2.0),
            ("b".into(), -2.0),
            ("xy".into(), -6.0),
        ])
        .unwrap();
        let corpus = TrainingCorpus::new(&["ab xy ab", "ab x"]);
        let order = removal_order(&corpus, &v);
        assert_eq!(v.piece(order[0]), Some("xy"));
    }

    #[test]
    fn prune_hits_target_exactly() {
        let text = ["o gato come o rato", "o rato roeu a roupa do rei", "a rainha riu do gato"];
        let v = build_seed_vocab(&text, 200).unwrap();
        let chars = TrainingCorpus::new(&text).characters().len();
        let target = chars + NUM_RESERVED + 5;
        let pruned = prune_vocab(&text, &v, target, 0.75).unwrap();
        assert_eq!(pruned.len(), target);
        assert!(prune_vocab(&text, &v, chars + 3, 0.75).is_err());
    }

    #[test]
    fn single_character_corpus() {
        let cfg = TrainerConfig {
            vocab_size: 10,
            ..TrainerConfig::default()
        };
        let v = train_vocab(&["a"], &cfg).unwrap();
        assert_eq!(ids_of(&v), ["a"]);
        assert_eq!(v.len(), NUM_RESERVED + 1);
    }
}
