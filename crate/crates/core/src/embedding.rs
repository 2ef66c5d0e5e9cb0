//! Sentence embeddings for semantic matching.
//!
//! [`HashProjectionEmbedder`] is a deterministic bag-of-stems model with signed
//! feature hashing. It needs no weights or network, which keeps evaluation
//! reproducible offline; a real encoder can be plugged in through [`Embedder`].

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::BackendError;

/// A unit-length vector (or all zeros for text with no usable tokens).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalizes `raw` to unit length.
    pub fn from_raw(mut raw: Vec<f64>) -> Self {
        let norm = libm::sqrt(raw.iter().map(|x| x * x).sum::<f64>());
        if norm > 0.0 {
            for x in &mut raw {
                *x /= norm;
            }
        }
        Self(raw)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Cosine similarity; both sides are already normalized.
    pub fn cosine(&self, other: &Self) -> f64 {
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        dot.clamp(-1.0, 1.0)
    }
}

pub trait Embedder: Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError>;

    /// Order-preserving batch form. Providers with a batch endpoint override it.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, BackendError> {
        if texts.is_empty() {
            return Err(BackendError::InvalidInput("empty embedding batch".into()));
        }
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashProjectionEmbedder {
    pub dim: usize,
}

impl Default for HashProjectionEmbedder {
    fn default() -> Self {
        Self { dim: 1024 }
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "been", "but", "by", "for", "from", "had", "has",
    "have", "he", "her", "his", "in", "into", "is", "it", "its", "of", "on", "or", "she", "that",
    "the", "their", "them", "they", "this", "to", "was", "were", "which", "who", "with",
];

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Crude suffix stripping so "poisoned" and "poison" share a feature.
fn stem(word: &str) -> &str {
    for suffix in ["ing", "ed", "es", "s"] {
        if word.len() > suffix.len() + 2 {
            if let Some(stripped) = word.strip_suffix(suffix) {
                return stripped;
            }
        }
    }
    word
}

/// Lowercased alphanumeric tokens. Stopwords are dropped unless nothing else
/// remains.
pub fn tokenize(text: &str) -> Vec<String> {
    let words: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect();
    let content: Vec<String> = words
        .iter()
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .cloned()
        .collect();
    if content.is_empty() {
        words
    } else {
        content
    }
}

impl Embedder for HashProjectionEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::InvalidInput("cannot embed blank text".into()));
        }
        if self.dim == 0 {
            return Err(BackendError::InvalidInput(
                "embedding dimension is zero".into(),
            ));
        }
        let mut v = vec![0.0; self.dim];
        for token in tokenize(text) {
            let h = fnv1a(stem(&token).as_bytes());
            let idx = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
            v[idx] += sign;
        }
        Ok(EmbeddingVector::from_raw(v))
    }
}
