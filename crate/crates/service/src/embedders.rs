//! Embedder selection and call accounting.

use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rag_core::embed::{EmbedError, DEFAULT_REFERENCE_DIM, REFERENCE_EMBEDDER_ID};
use rag_core::{Embedder, EmbedderSpec, EmbeddingVector, ReferenceEmbedder};

use crate::error::ServiceError;
use crate::remote::RemoteEmbedder;

/// Parsed `--embedder` value: `ref-tfidf-v1`, `ref-tfidf-v1:DIM` or
/// `remote:MODEL@URL`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmbedderSelector {
    Reference { dim: usize },
    Remote { model: String, endpoint: String },
}

impl FromStr for EmbedderSelector {
    type Err = ServiceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || ServiceError::UnknownEmbedder(s.to_owned());
        if s == REFERENCE_EMBEDDER_ID {
            return Ok(Self::Reference {
                dim: DEFAULT_REFERENCE_DIM,
            });
        }
        if let Some(dim) = s
            .strip_prefix(REFERENCE_EMBEDDER_ID)
            .and_then(|r| r.strip_prefix(':'))
        {
            return match dim.parse::<usize>() {
                Ok(d) if d > 0 => Ok(Self::Reference { dim: d }),
                _ => Err(unknown()),
            };
        }
        match RemoteEmbedder::parse_id(s) {
            Some((model, endpoint)) if !model.is_empty() && !endpoint.is_empty() => Ok(Self::Remote {
                model: model.to_owned(),
                endpoint: endpoint.to_owned(),
            }),
            _ => Err(unknown()),
        }
    }
}

/// Wraps an embedder and counts every text it embeds.
pub struct CountingEmbedder {
    inner: Box<dyn Embedder>,
    counter: Arc<AtomicU64>,
}

impl CountingEmbedder {
    pub fn new(inner: Box<dyn Embedder>, counter: Arc<AtomicU64>) -> Self {
        Self { inner, counter }
    }
}

impl Embedder for CountingEmbedder {
    fn spec(&self) -> &EmbedderSpec {
        self.inner.spec()
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        self.counter.fetch_add(texts.len() as u64, Ordering::Relaxed);
        self.inner.embed_batch(texts)
    }
}

/// Builds an embedder for a selector. Remote endpoints are probed once to
/// learn their dimension.
pub fn from_selector(sel: &EmbedderSelector, max_in_flight: usize) -> Result<Box<dyn Embedder>, ServiceError> {
    Ok(match sel {
        EmbedderSelector::Reference { dim } => Box::new(ReferenceEmbedder::new(*dim)),
        EmbedderSelector::Remote { model, endpoint } => {
            Box::new(RemoteEmbedder::probe(model, endpoint, max_in_flight)?)
        }
    })
}

/// Rebuilds the embedder a saved store was made with, without calling it.
pub fn from_spec(spec: &EmbedderSpec, max_in_flight: usize) -> Result<Box<dyn Embedder>, ServiceError> {
    if spec.is_reference() {
        return Ok(Box::new(ReferenceEmbedder::new(spec.dim)));
    }
    match RemoteEmbedder::parse_id(&spec.id) {
        Some((model, endpoint)) => Ok(Box::new(RemoteEmbedder::new(model, endpoint, spec.dim, max_in_flight))),
        None => Err(ServiceError::UnknownEmbedder(spec.id.clone())),
    }
}
