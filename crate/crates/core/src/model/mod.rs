//! Encoder-decoder transformer, heads, decoding and checkpoints.

pub mod checkpoint;
pub mod decode;
pub mod graph;
pub mod heads;
pub mod params;
pub mod transformer;

pub use checkpoint::{round_to_f32, Checkpoint, OPT_PREFIX};
pub use decode::{beam_decode, beam_search, exhaustive_search, greedy_decode, greedy_search, Hypothesis, SearchSpec, StepScorer};
pub use graph::Mat;
pub use heads::{classification_head, regression_head, CLASS_NAMES};
pub use params::{ModelConfig, ParamStore, PositionScheme, Tensor, TrainableMask, EMBEDDING};
pub use transformer::{loss_xent, parameter_count, Example, Gradients, Seq2Seq, Target, DECODER_START_ID};
