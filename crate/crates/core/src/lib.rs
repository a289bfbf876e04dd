//! Desk-scale text-to-text toolkit for Portuguese: corpus packing, Unigram
//! vocabulary training, denoising pretraining of a small encoder-decoder,
//! sentence-pair and NER fine-tuning, decoding and evaluation.

pub mod config;
pub mod corpus;
pub mod denoise;
pub mod error;
pub mod metrics;
pub mod model;
pub mod ner;
pub mod optim;
pub mod rng;
pub mod tasks;
pub mod train;
pub mod unigram;

mod binio;
mod par;

pub use error::{Error, ErrorKind, Result};
