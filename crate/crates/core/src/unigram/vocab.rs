use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::lattice::SegmentationLattice;
use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;
pub const MASK_ID: u32 = 3;
pub const NUM_RESERVED: usize = 4;

pub const PAD_PIECE: &str = "<pad>";
pub const EOS_PIECE: &str = "</s>";
pub const UNK_PIECE: &str = "<unk>";
pub const MASK_PIECE: &str = "<M>";

/// Word-boundary marker; replaces every space so decoding is lossless.
pub const SPACE_MARKER: char = '\u{2581}';

const RESERVED: [&str; NUM_RESERVED] = [PAD_PIECE, EOS_PIECE, UNK_PIECE, MASK_PIECE];

/// Token ids over a vocabulary. Padding may only appear as a right suffix.
pub type TokenSequence = Vec<u32>;

/// Unigram subword vocabulary. Ids 0..4 are the control tokens
/// (padding, end-of-sequence, unknown, mask); the rest are scored pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct UnigramVocab {
    pieces: Vec<(String, f64)>,
    index: HashMap<String, u32>,
    max_piece_chars: usize,
}

impl UnigramVocab {
    /// Builds a vocabulary from non-reserved pieces, in id order starting at 4.
    pub fn from_pieces(pieces: Vec<(String, f64)>) -> Result<Self> {
        let mut all: Vec<(String, f64)> = RESERVED.iter().map(|p| ((*p).to_owned(), 0.0)).collect();
        all.extend(pieces);
        Self::from_all(all)
    }

    fn from_all(pieces: Vec<(String, f64)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(pieces.len());
        let mut max_piece_chars = 1;
        for (i, (piece, lp)) in pieces.iter().enumerate() {
            if i >= NUM_RESERVED {
                if piece.is_empty() || piece.contains(['\t', '\n']) {
                    return Err(Error::Format(format!("invalid piece {piece:?}")));
                }
                if !(lp.is_finite() && *lp <= 0.0) {
                    return Err(Error::Format(format!("piece {piece:?} has log_prob {lp}")));
                }
                max_piece_chars = max_piece_chars.max(piece.chars().count());
            }
            if index.insert(piece.clone(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate piece {piece:?}")));
            }
        }
        Ok(Self {
            pieces,
            index,
            max_piece_chars,
        })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.len() <= NUM_RESERVED
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(|(p, _)| p.as_str())
    }

    pub fn log_prob(&self, id: u32) -> f64 {
        self.pieces[id as usize].1
    }

    pub fn id_of(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn max_piece_chars(&self) -> usize {
        self.max_piece_chars
    }

    /// Non-reserved `(piece, log_prob)` entries in id order.
    pub fn scored_pieces(&self) -> &[(String, f64)] {
        &self.pieces[NUM_RESERVED..]
    }

    pub fn is_reserved(id: u32) -> bool {
        (id as usize) < NUM_RESERVED
    }

    /// Score of the unknown fallback edge: ten nats below the rarest piece.
    pub fn unk_log_prob(&self) -> f64 {
        self.scored_pieces()
            .iter()
            .map(|(_, lp)| *lp)
            .fold(0.0f64, f64::min)
            - 10.0
    }

    pub fn covers(&self, text: &str) -> bool {
        normalize(text)
            .chars()
            .all(|c| self.index.get(c.encode_utf8(&mut [0; 4]) as &str).is_some_and(|&id| id as usize >= NUM_RESERVED))
    }

    /// Maximum-probability segmentation of `text`. Unknown characters map to
    /// the unknown id; control ids are never produced otherwise.
    pub fn encode(&self, text: &str) -> TokenSequence {
        let mut out = Vec::new();
        for chunk in split_chunks(&normalize(text)) {
            let lattice = SegmentationLattice::build(self, &chunk);
            out.extend(lattice.viterbi().0);
        }
        out
    }

    pub fn encode_pieces(&self, text: &str) -> Vec<String> {
        self.encode(text)
            .into_iter()
            .map(|id| self.pieces[id as usize].0.clone())
            .collect()
    }

    /// Inverse of [`encode`](Self::encode) for covered text. Trailing padding
    /// is stripped, end-of-sequence renders as nothing, the unknown id as
    /// `⁇` and the mask id as `<M>`.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let end = ids.iter().rposition(|&id| id != PAD_ID).map_or(0, |p| p + 1);
        let mut out = String::new();
        for &id in &ids[..end] {
            let Some((piece, _)) = self.pieces.get(id as usize) else {
                return Err(Error::IdOutOfRange {
                    id,
                    vocab_size: self.len(),
                });
            };
            match id {
                PAD_ID | EOS_ID => {}
                UNK_ID => out.push('⁇'),
                MASK_ID => out.push_str(MASK_PIECE),
                _ => out.extend(piece.chars().map(|c| if c == SPACE_MARKER { ' ' } else { c })),
            }
        }
        Ok(out)
    }

    /// Decodes up to (not including) the first end-of-sequence id.
    pub fn decode_until_eos(&self, ids: &[u32]) -> Result<String> {
        let end = ids.iter().position(|&id| id == EOS_ID).unwrap_or(ids.len());
        self.decode(&ids[..end])
    }

    /// One `piece<TAB>log_prob` line per id, log-probs with 17 significant
    /// digits.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for (piece, lp) in &self.pieces {
            let _ = writeln!(s, "{piece}\t{lp:.16e}");
        }
        s
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let mut pieces = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let (piece, lp) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::Format(format!("vocab line {}: missing tab", n + 1)))?;
            let lp: f64 = lp
                .parse()
                .map_err(|_| Error::Format(format!("vocab line {}: bad log_prob {lp:?}", n + 1)))?;
            pieces.push((piece.to_owned(), lp));
        }
        if pieces.len() < NUM_RESERVED
            || pieces[..NUM_RESERVED].iter().zip(RESERVED).any(|((p, lp), r)| p != r || *lp != 0.0)
        {
            return Err(Error::Format("vocab must start with the four control tokens".into()));
        }
        Self::from_all(pieces)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path.display(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?;
        Self::from_file_string(&text)
    }
}

/// Replaces spaces with the boundary marker.
pub fn normalize(text: &str) -> String {
    text.replace(' ', &SPACE_MARKER.to_string())
}

/// Splits normalized text before every boundary marker. No piece spans a
/// marker except as its first character, so chunks segment independently.
pub fn split_chunks(normalized: &str) -> Vec<Vec<char>> {
    let mut chunks: Vec<Vec<char>> = Vec::new();
    for c in normalized.chars() {
        if c == SPACE_MARKER || chunks.is_empty() {
            chunks.push(Vec::new());
        }
        chunks.last_mut().expect("just pushed").push(c);
    }
    chunks
}
