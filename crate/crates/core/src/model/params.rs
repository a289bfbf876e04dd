use std::collections::HashMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionScheme {
    LearnedAbsolute,
    /// Per-head scalar bias indexed by log-bucketed relative distance,
    /// shared by all layers of a stack.
    RelativeBucket { num_buckets: usize, max_distance: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub max_len: usize,
    pub position_scheme: PositionScheme,
    pub tie_embeddings: bool,
}

impl ModelConfig {
    /// A desk-sized default for a vocabulary of `vocab_size` pieces.
    pub fn small(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 32,
            n_heads: 4,
            d_ff: 64,
            n_enc_layers: 2,
            n_dec_layers: 2,
            max_len: 512,
            position_scheme: PositionScheme::LearnedAbsolute,
            tie_embeddings: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("model config: {m}")));
        if self.vocab_size < 4 {
            return bad("vocab_size must cover the four control tokens");
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return bad("d_model, n_heads and d_ff must be positive");
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by n_heads");
        }
        if self.max_len == 0 {
            return bad("max_len must be at least 1");
        }
        if let PositionScheme::RelativeBucket { num_buckets, max_distance } = self.position_scheme {
            if num_buckets < 4 || max_distance <= num_buckets / 2 {
                return bad("relative buckets need num_buckets >= 4 and max_distance > num_buckets / 2");
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape/data mismatch");
        Self {
            name: name.into(),
            shape,
            data,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![0.0; n])
    }

    /// Rows when viewed as a matrix; rank-1 tensors are a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2 && self.shape[0] > 1 && self.shape[1] > 1
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn push(&mut self, t: Tensor) -> usize {
        let i = self.tensors.len();
        let previous = self.index.insert(t.name.clone(), i);
        assert!(previous.is_none(), "duplicate tensor {}", t.name);
        self.tensors.push(t);
        i
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

pub const EMBEDDING: &str = "shared.embedding";

/// Which parameter tensors an optimizer may update.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainableMask(pub Vec<bool>);

impl TrainableMask {
    pub fn all(params: &ParamStore) -> Self {
        Self(vec![true; params.len()])
    }

    /// Only the token embedding; with tied embeddings this also covers the
    /// output projection, which reads the same tensor.
    pub fn embeddings_only(params: &ParamStore) -> Self {
        Self(params.tensors().iter().map(|t| t.name == EMBEDDING).collect())
    }

    /// Encoder stack, token embedding and the pooled heads; used when the
    /// decoder plays no part in the objective.
    pub fn encoder_and_heads(params: &ParamStore) -> Self {
        Self(
            params
                .tensors()
                .iter()
                .map(|t| t.name == EMBEDDING || t.name.starts_with("enc.") || t.name.starts_with("head."))
                .collect(),
        )
    }

    pub fn is_trainable(&self, i: usize) -> bool {
        self.0[i]
    }
}
