//! Greedy and beam search over any next-token scorer.

use std::cmp::Ordering;

use super::transformer::{EncodedInput, Seq2Seq};
use crate::error::Result;
use crate::unigram::{EOS_ID, PAD_ID};

/// Source of next-token log-probabilities given the tokens generated so far.
pub trait StepScorer {
    fn next_log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>>;
}

/// Search settings shared by greedy and beam decoding.
#[derive(Debug, Clone)]
pub struct SearchSpec {
    pub eos: u32,
    /// Tokens never generated.
    pub banned: Vec<u32>,
    pub max_out: usize,
}

impl SearchSpec {
    /// Model decoding: stop at end-of-sequence, never emit padding.
    pub fn for_model(max_out: usize) -> Self {
        Self {
            eos: EOS_ID,
            banned: vec![PAD_ID],
            max_out,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    /// Cumulative log-probability.
    pub score: f64,
}

impl Hypothesis {
    /// Cumulative log-probability divided by length (end-of-sequence included).
    pub fn normalized(&self) -> f64 {
        if self.tokens.is_empty() {
            self.score
        } else {
            self.score / self.tokens.len() as f64
        }
    }
}

/// Ordering used to pick the final hypothesis: higher normalized score, then
/// higher raw score, then shorter, then lexicographically smaller ids.
pub fn compare_final(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.normalized()
        .total_cmp(&a.normalized())
        .then(b.score.total_cmp(&a.score))
        .then(a.tokens.len().cmp(&b.tokens.len()))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

fn argmax_allowed(lp: &[f64], banned: &[u32]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in lp.iter().enumerate() {
        if banned.contains(&(i as u32)) {
            continue;
        }
        if best.is_none_or(|b| v > lp[b]) {
            best = Some(i);
        }
    }
    best
}

/// Repeated argmax (lowest id on ties) until end-of-sequence or `max_out`
/// tokens. The end-of-sequence id is included when emitted.
pub fn greedy_search<S: StepScorer + ?Sized>(scorer: &S, spec: &SearchSpec) -> Result<Hypothesis> {
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
    };
    while hyp.tokens.len() < spec.max_out {
        let lp = scorer.next_log_probs(&hyp.tokens)?;
        let Some(t) = argmax_allowed(&lp, &spec.banned) else { break };
        hyp.tokens.push(t as u32);
        hyp.score += lp[t];
        if t as u32 == spec.eos {
            break;
        }
    }
    Ok(hyp)
}

/// Length-normalized beam search. Each step scores every one-token
/// extension of the live beam; extensions ending in end-of-sequence are
/// retired as finished and the best `width` others (ties: lexicographic ids)
/// form the next beam. Search runs until nothing is live, `max_out` tokens
/// have been generated (live hypotheses then count as finished), or no live
/// hypothesis can still beat the best finished one. The result is the best
/// finished hypothesis under [`compare_final`]. Width 1 is greedy search.
pub fn beam_search<S: StepScorer + ?Sized>(scorer: &S, width: usize, spec: &SearchSpec) -> Result<Hypothesis> {
    if width <= 1 {
        return greedy_search(scorer, spec);
    }
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..spec.max_out {
        let mut cands = Vec::new();
        for h in &live {
            let lp = scorer.next_log_probs(&h.tokens)?;
            for (t, &v) in lp.iter().enumerate() {
                if banned(spec, t) || v == f64::NEG_INFINITY {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                tokens.push(t as u32);
                let c = Hypothesis { tokens, score: h.score + v };
                if t as u32 == spec.eos {
                    finished.push(c);
                } else {
                    cands.push(c);
                }
            }
        }
        cands.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens)));
        cands.truncate(width);
        live = cands;
        if live.is_empty() || settled(&finished, &live, spec.max_out) {
            live.clear();
            break;
        }
    }
    finished.extend(live);
    Ok(finished
        .into_iter()
        .min_by(compare_final)
        .unwrap_or(Hypothesis {
            tokens: Vec::new(),
            score: 0.0,
        }))
}

/// True when every completion of every live hypothesis normalizes strictly
/// below the best finished score. Log-probabilities never increase a score,
/// so a live score `s` can at best reach `max(s / (len + 1), s / max_out)`.
fn settled(finished: &[Hypothesis], live: &[Hypothesis], max_out: usize) -> bool {
    let Some(best) = finished.iter().map(Hypothesis::normalized).reduce(f64::max) else {
        return false;
    };
    live.iter().all(|h| {
        let bound = (h.score / (h.tokens.len() + 1) as f64).max(h.score / max_out as f64);
        best > bound
    })
}

fn banned(spec: &SearchSpec, t: usize) -> bool {
    spec.banned.contains(&(t as u32))
}

/// Best hypothesis among every sequence the search could produce: those
/// ending in end-of-sequence within `max_out` tokens plus all length
/// `max_out` sequences without it.
pub fn exhaustive_search<S: StepScorer + ?Sized>(scorer: &S, spec: &SearchSpec) -> Result<Hypothesis> {
    let mut best: Option<Hypothesis> = None;
    let mut stack = vec![Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
    }];
    while let Some(h) = stack.pop() {
        let done = h.tokens.last() == Some(&spec.eos) || h.tokens.len() == spec.max_out;
        if done {
            if best.as_ref().is_none_or(|b| compare_final(&h, b) == Ordering::Less) {
                best = Some(h);
            }
            continue;
        }
        let lp = scorer.next_log_probs(&h.tokens)?;
        for (t, &v) in lp.iter().enumerate() {
            if banned(spec, t) || v == f64::NEG_INFINITY {
                continue;
            }
            let mut tokens = h.tokens.clone();
            tokens.push(t as u32);
            stack.push(Hypothesis { tokens, score: h.score + v });
        }
    }
    Ok(best.unwrap_or(Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
    }))
}

/// A model bound to one encoded input.
pub struct ModelScorer<'a> {
    pub model: &'a Seq2Seq,
    pub input: EncodedInput,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a Seq2Seq, enc_ids: &[u32]) -> Result<Self> {
        Ok(Self {
            model,
            input: model.encode_input(enc_ids)?,
        })
    }
}

impl StepScorer for ModelScorer<'_> {
    fn next_log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        self.model.next_log_probs(&self.input, prefix)
    }
}

/// Greedy generation from the model; output ends with end-of-sequence
/// unless `max_out` was reached first.
pub fn greedy_decode(model: &Seq2Seq, enc_ids: &[u32], max_out: usize) -> Result<Vec<u32>> {
    let scorer = ModelScorer::new(model, enc_ids)?;
    Ok(greedy_search(&scorer, &SearchSpec::for_model(max_out))?.tokens)
}

pub fn beam_decode(model: &Seq2Seq, enc_ids: &[u32], width: usize, max_out: usize) -> Result<Vec<u32>> {
    let scorer = ModelScorer::new(model, enc_ids)?;
    Ok(beam_search(&scorer, width, &SearchSpec::for_model(max_out))?.tokens)
}
