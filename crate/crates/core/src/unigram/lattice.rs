//! Segmentation lattice over one word and the dynamic programs on it.

use super::vocab::{UnigramVocab, UNK_ID};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub end: usize,
    pub piece_id: u32,
    pub log_prob: f64,
}

/// Edges leaving each character position of a string. Every position has at
/// least one edge, so a complete path always exists.
#[derive(Debug, Clone)]
pub struct SegmentationLattice {
    len: usize,
    edges: Vec<Vec<Edge>>,
}

/// Relative tolerance under which two path scores count as tied.
const TIE_EPS: f64 = 1e-12;

pub(crate) fn scores_tie(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_EPS * a.abs().max(b.abs()).max(1.0)
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

impl SegmentationLattice {
    /// Builds the lattice of `chars` against `vocab`. Positions with no
    /// single-character piece get an unknown edge.
    pub fn build(vocab: &UnigramVocab, chars: &[char]) -> Self {
        Self::build_filtered(vocab, chars, |_| true)
    }

    pub(crate) fn build_filtered(
        vocab: &UnigramVocab,
        chars: &[char],
        keep: impl Fn(u32) -> bool,
    ) -> Self {
        let n = chars.len();
        let mut edges = vec![Vec::new(); n];
        let mut key = String::new();
        let unk_lp = vocab.unk_log_prob();
        for (i, slot) in edges.iter_mut().enumerate() {
            key.clear();
            let mut has_single = false;
            for j in i..n.min(i + vocab.max_piece_chars()) {
                key.push(chars[j]);
                if let Some(id) = vocab.id_of(&key) {
                    if keep(id) {
                        if j == i {
                            has_single = true;
                        }
                        slot.push(Edge {
                            end: j + 1,
                            piece_id: id,
                            log_prob: vocab.log_prob(id),
                        });
                    }
                }
            }
            if !has_single {
                slot.insert(
                    0,
                    Edge {
                        end: i + 1,
                        piece_id: UNK_ID,
                        log_prob: unk_lp,
                    },
                );
            }
        }
        Self { len: n, edges }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn edges_from(&self, pos: usize) -> &[Edge] {
        &self.edges[pos]
    }

    /// Best path: highest total log-probability, then fewest pieces, then
    /// the lexicographically smallest piece sequence. Pieces leaving the same
    /// position are prefixes of one another, so the last rule prefers the
    /// shorter first piece. Returns `(piece ids, score)`.
    pub fn viterbi(&self) -> (Vec<u32>, f64) {
        let n = self.len;
        // best[i] = (score, pieces, chosen edge) for the suffix starting at i.
        let mut score = vec![0.0f64; n + 1];
        let mut count = vec![0usize; n + 1];
        let mut choice = vec![0usize; n];
        for i in (0..n).rev() {
            let mut best: Option<(f64, usize, usize, usize)> = None;
            for (k, e) in self.edges[i].iter().enumerate() {
                let s = e.log_prob + score[e.end];
                let c = 1 + count[e.end];
                let len = e.end - i;
                let better = match best {
                    None => true,
                    Some((bs, bc, blen, _)) => {
                        if !scores_tie(s, bs) {
                            s > bs
                        } else if c != bc {
                            c < bc
                        } else {
                            len < blen
                        }
                    }
                };
                if better {
                    best = Some((s, c, len, k));
                }
            }
            let (s, c, _, k) = best.expect("every position has an edge");
            score[i] = s;
            count[i] = c;
            choice[i] = k;
        }
        let mut ids = Vec::with_capacity(count[0]);
        let mut pos = 0;
        while pos < n {
            let e = self.edges[pos][choice[pos]];
            ids.push(e.piece_id);
            pos = e.end;
        }
        (ids, score[0])
    }

    /// Log of the total probability over all paths.
    pub fn log_partition(&self) -> f64 {
        self.forward()[self.len]
    }

    fn forward(&self) -> Vec<f64> {
        let mut alpha = vec![f64::NEG_INFINITY; self.len + 1];
        alpha[0] = 0.0;
        for i in 0..self.len {
            if alpha[i] == f64::NEG_INFINITY {
                continue;
            }
            for e in &self.edges[i] {
                alpha[e.end] = log_add(alpha[e.end], alpha[i] + e.log_prob);
            }
        }
        alpha
    }

    fn backward(&self) -> Vec<f64> {
        let mut beta = vec![f64::NEG_INFINITY; self.len + 1];
        beta[self.len] = 0.0;
        for i in (0..self.len).rev() {
            let mut acc = f64::NEG_INFINITY;
            for e in &self.edges[i] {
                acc = log_add(acc, e.log_prob + beta[e.end]);
            }
            beta[i] = acc;
        }
        beta
    }

    /// Adds `weight` times the posterior expected count of every piece to
    /// `counts` and returns the log partition function.
    pub fn accumulate_expected_counts(&self, weight: f64, counts: &mut [f64]) -> f64 {
        let alpha = self.forward();
        let beta = self.backward();
        let z = alpha[self.len];
        for i in 0..self.len {
            for e in &self.edges[i] {
                if e.piece_id == UNK_ID {
                    continue;
                }
                let post = (alpha[i] + e.log_prob + beta[e.end] - z).exp();
                counts[e.piece_id as usize] += weight * post;
            }
        }
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_matches_direct() {
        let a: f64 = 0.3f64.ln();
        let b: f64 = 0.2f64.ln();
        assert!((log_add(a, b) - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(log_add(f64::NEG_INFINITY, a), a);
    }

    #[test]
    fn unknown_fallback_keeps_a_path() {
        let vocab = UnigramVocab::from_pieces(vec![("a".into(), 0.0)]).unwrap();
        let chars: Vec<char> = "aza".chars().collect();
        let lat = SegmentationLattice::build(&vocab, &chars);
        let (ids, _) = lat.viterbi();
        assert_eq!(ids.len(), 3);
        assert_eq!(ids[1], UNK_ID);
        assert!(lat.log_partition().is_finite());
    }
}
