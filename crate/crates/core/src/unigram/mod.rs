//! Unigram language-model subword vocabulary: training by EM, Viterbi
//! encoding and lossless decoding.

mod lattice;
mod trainer;
mod vocab;

pub use lattice::{Edge, SegmentationLattice};
pub use trainer::{
    build_seed_vocab, em_step, prune_vocab, train_vocab, TrainerConfig, TrainingCorpus,
};
pub use vocab::{
    normalize, split_chunks, TokenSequence, UnigramVocab, EOS_ID, EOS_PIECE, MASK_ID, MASK_PIECE,
    NUM_RESERVED, PAD_ID, PAD_PIECE, SPACE_MARKER, UNK_ID, UNK_PIECE,
};
