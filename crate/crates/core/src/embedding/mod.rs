//! Text embeddings, cosine similarity and query-time selection of feature
//! elements.

mod cache;
mod http;
mod select;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::text::word_tokens;

pub use cache::CachedEmbedder;
pub use http::HttpEmbedder;
pub use select::{adaptive_select, adaptive_select_embedded, SelectedFeatures};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("zero-norm vector")]
    ZeroVector,
    #[error("embedding backend: {0}")]
    Backend(String),
    #[error("embedding cache: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        EmbeddingVector(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimMismatch(a.dim(), b.dim()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub trait Embedder: Send + Sync {
    /// Identifies the model and its configuration; part of cache keys.
    fn id(&self) -> String;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

impl<T: Embedder + ?Sized> Embedder for Box<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        (**self).embed(text)
    }
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        (**self).embed_batch(texts)
    }
}

impl<T: Embedder + ?Sized> Embedder for std::sync::Arc<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        (**self).embed(text)
    }
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        (**self).embed_batch(texts)
    }
}

/// Offline embedder: every word token maps to a seeded pseudo-random vector
/// with entries in [-1, 1]; a text embeds as the sum over its tokens. Texts
/// sharing words therefore have correlated embeddings.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::Backend("dim must be positive".into()));
        }
        Ok(HashEmbedder { dim, seed })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn add_token(&self, token: &str, acc: &mut [f64]) {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
        for v in acc.iter_mut() {
            *v += rng.random_range(-1.0..=1.0);
        }
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> String {
        format!("hash-d{}-s{}", self.dim, self.seed)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        let mut acc = vec![0.0; self.dim];
        // Sorted so the float sum is independent of word order.
        let mut tokens = word_tokens(trimmed);
        tokens.sort_unstable();
        if tokens.is_empty() {
            self.add_token(trimmed, &mut acc);
        }
        for t in &tokens {
            self.add_token(t, &mut acc);
        }
        Ok(EmbeddingVector(acc))
    }
}

pub(crate) fn content_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}
