//! Text embeddings: the embedder contract, unit-norm vectors and the
//! deterministic lexical reference embedder.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::tokenize;

/// Identifier of the in-tree reference embedder.
pub const REFERENCE_EMBEDDER_ID: &str = "ref-tfidf-v1";
pub const DEFAULT_REFERENCE_DIM: usize = 1024;

const NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("text has no tokens{}", .index.map(|i| format!(" (batch index {i})")).unwrap_or_default())]
    EmptyText { index: Option<usize> },
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding is the zero vector{}", .index.map(|i| format!(" (batch index {i})")).unwrap_or_default())]
    ZeroVector { index: Option<usize> },
    #[error("vector is not unit-norm (norm {0})")]
    NotUnitNorm(f64),
    #[error("embedding backend unavailable: {0}")]
    BackendUnavailable(String),
}

impl EmbedError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::EmptyText { .. } => "EmptyText",
            Self::DimensionMismatch { .. } => "DimensionMismatch",
            Self::ZeroVector { .. } => "ZeroVector",
            Self::NotUnitNorm(_) => "NotUnitNorm",
            Self::BackendUnavailable(_) => "BackendUnavailable",
        }
    }

    fn at_index(self, i: usize) -> Self {
        match self {
            Self::EmptyText { .. } => Self::EmptyText { index: Some(i) },
            Self::ZeroVector { .. } => Self::ZeroVector { index: Some(i) },
            other => other,
        }
    }
}

/// A unit-norm embedding. The zero vector cannot be represented.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Scales `values` to unit length.
    pub fn normalize(values: Vec<f32>) -> Result<Self, EmbedError> {
        let norm = l2_norm(&values);
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbedError::ZeroVector { index: None });
        }
        Ok(Self(values.into_iter().map(|v| (v as f64 / norm) as f32).collect()))
    }

    /// Wraps values that are already unit-norm, rejecting anything further
    /// than 1e-5 from length one.
    pub fn from_unit(values: Vec<f32>) -> Result<Self, EmbedError> {
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(EmbedError::NotUnitNorm(norm));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

fn l2_norm(values: &[f32]) -> f64 {
    values
        .iter()
        .map(|&v| v as f64 * v as f64)
        .sum::<f64>()
        .sqrt()
}

/// Dot product accumulated in `f64`. Equals cosine similarity for unit vectors.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(dot(&a.0, &b.0).clamp(-1.0, 1.0))
}

/// Names an embedding model and its output dimension. Every vector in one
/// store comes from a single spec.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmbedderSpec {
    pub id: String,
    pub dim: usize,
}

impl EmbedderSpec {
    pub fn new(id: impl Into<String>, dim: usize) -> Self {
        Self { id: id.into(), dim }
    }

    pub fn reference(dim: usize) -> Self {
        Self::new(REFERENCE_EMBEDDER_ID, dim)
    }

    pub fn is_reference(&self) -> bool {
        self.id == REFERENCE_EMBEDDER_ID
    }
}

/// Anything that turns text into embeddings.
///
/// Implementations must be deterministic per text and must report errors for
/// batches with the offending index.
pub trait Embedder: Send + Sync {
    fn spec(&self) -> &EmbedderSpec;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError>;

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut out = self.embed_batch(&[text]).map_err(|e| match e {
            EmbedError::EmptyText { .. } => EmbedError::EmptyText { index: None },
            EmbedError::ZeroVector { .. } => EmbedError::ZeroVector { index: None },
            other => other,
        })?;
        Ok(out.remove(0))
    }
}

/// Hashed bag-of-words embedder with `ln(1 + tf)` weights.
///
/// Tokens are lowercased, hashed with FNV-1a-64 and folded into `dim`
/// buckets. Identical texts give bitwise-identical vectors; token order is
/// irrelevant.
#[derive(Debug, Clone)]
pub struct ReferenceEmbedder {
    spec: EmbedderSpec,
}

impl ReferenceEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            spec: EmbedderSpec::reference(dim),
        }
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(EmbedError::EmptyText { index: None });
        }
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for t in tokens {
            *tf.entry(t.to_lowercase()).or_default() += 1;
        }

        let dim = self.spec.dim;
        let mut acc = vec![0f64; dim];
        for (token, count) in &tf {
            acc[bucket(token, dim)] += (1.0 + *count as f64).ln();
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(EmbeddingVector(
            acc.into_iter().map(|v| (v / norm) as f32).collect(),
        ))
    }
}

impl Embedder for ReferenceEmbedder {
    fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| self.embed_one(t).map_err(|e| e.at_index(i)))
            .collect()
    }
}

/// Bucket index of a (lowercased) token for a `dim`-bucket reference embedding.
pub fn bucket(token: &str, dim: usize) -> usize {
    (fnv1a64(token.as_bytes()) % dim as u64) as usize
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

/// Embeds with the embedder named by `spec`. Only the reference embedder is
/// available in-process; other ids need an adapter and report
/// `BackendUnavailable` here.
pub fn embed_text(text: &str, spec: &EmbedderSpec) -> Result<EmbeddingVector, EmbedError> {
    reference_for(spec)?.embed_text(text)
}

pub fn embed_batch(texts: &[&str], spec: &EmbedderSpec) -> Result<Vec<EmbeddingVector>, EmbedError> {
    reference_for(spec)?.embed_batch(texts)
}

fn reference_for(spec: &EmbedderSpec) -> Result<ReferenceEmbedder, EmbedError> {
    if !spec.is_reference() {
        return Err(EmbedError::BackendUnavailable(format!(
            "no in-process embedder for {:?}",
            spec.id
        )));
    }
    if spec.dim == 0 {
        return Err(EmbedError::BackendUnavailable("dimension must be positive".into()));
    }
    Ok(ReferenceEmbedder::new(spec.dim))
}
