//! In-memory chunk store with exact and HNSW search, persisted as a
//! directory of plain files.
//!
//! A [`Store`] is plain data: searches take `&self`, inserts and index
//! builds take `&mut self`. Callers that share a store between threads wrap it
//! in a reader-writer lock.

mod filter;
mod hnsw;
mod persist;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::{Chunk, ChunkParams};
use crate::embed::{dot, EmbedderSpec, EmbeddingVector};

pub use filter::{Clause, CmpOp, FilterError, FilterPredicate, FilterValue};
pub use hnsw::{HnswIndex, HnswParams};
pub use persist::{encode_vectors, ANN_FILE, CHUNKS_FILE, META_FILE, VECTORS_FILE};

pub const DEFAULT_ANN_SEED: u64 = 0x5EED_CAFE;
pub const DEFAULT_EF_SEARCH: usize = 64;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("vector dimension mismatch: store has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{chunks} chunks but {vectors} vectors")]
    LengthMismatch { chunks: usize, vectors: usize },
    #[error("store dimension must be at least 1")]
    InvalidDimension,
    #[error("cannot build an index over an empty store")]
    EmptyStore,
    #[error("approximate index is missing or does not cover all records; rebuild it")]
    StaleIndex,
    #[error("corrupt store file {file} at byte {offset}: {reason}")]
    CorruptStore {
        file: String,
        offset: u64,
        reason: String,
    },
    #[error("unsupported {file} format version {found}")]
    IncompatibleVersion { file: String, found: u64 },
    #[error("store I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::DimensionMismatch { .. } => "DimensionMismatch",
            Self::LengthMismatch { .. } => "LengthMismatch",
            Self::InvalidDimension => "InvalidDimension",
            Self::EmptyStore => "EmptyStore",
            Self::StaleIndex => "StaleIndex",
            Self::CorruptStore { .. } => "CorruptStore",
            Self::IncompatibleVersion { .. } => "IncompatibleVersion",
            Self::Io(_) => "Io",
        }
    }
}

/// Everything needed to create an empty store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreConfig {
    pub embedder: EmbedderSpec,
    pub chunk_params: ChunkParams,
    pub ann_seed: u64,
}

impl StoreConfig {
    pub fn new(embedder: EmbedderSpec, chunk_params: ChunkParams) -> Self {
        Self {
            embedder,
            chunk_params,
            ann_seed: DEFAULT_ANN_SEED,
        }
    }
}

/// Snapshot of a store's descriptive state. The metric is always cosine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub dim: usize,
    pub embedder: EmbedderSpec,
    pub chunk_params: ChunkParams,
    pub count: usize,
    pub ann_seed: u64,
}

/// Borrowed view of one stored record.
#[derive(Debug, Clone, Copy)]
pub struct ChunkRecord<'a> {
    pub record_id: u64,
    pub chunk: &'a Chunk,
    pub vector: &'a [f32],
}

/// A scored chunk. Hit lists are ordered by descending score, ties by
/// ascending record id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub record_id: u64,
    pub score: f64,
    pub chunk: Chunk,
}

/// Ranking order for hits: higher score first, then lower id.
pub fn rank_order(a: (f64, u64), b: (f64, u64)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

#[derive(Debug, Clone)]
pub struct Store {
    config: StoreConfig,
    chunks: Vec<Chunk>,
    /// Row-major, `dim` floats per record.
    vectors: Vec<f32>,
    index: Option<HnswIndex>,
}

impl Store {
    pub fn create(config: StoreConfig) -> Result<Self, StoreError> {
        if config.embedder.dim == 0 {
            return Err(StoreError::InvalidDimension);
        }
        Ok(Self {
            config,
            chunks: Vec::new(),
            vectors: Vec::new(),
            index: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.config.embedder.dim
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn embedder(&self) -> &EmbedderSpec {
        &self.config.embedder
    }

    pub fn meta(&self) -> StoreMeta {
        StoreMeta {
            dim: self.dim(),
            embedder: self.config.embedder.clone(),
            chunk_params: self.config.chunk_params,
            count: self.len(),
            ann_seed: self.config.ann_seed,
        }
    }

    pub fn vector(&self, record_id: u64) -> Option<&[f32]> {
        let i = record_id as usize;
        (i < self.len()).then(|| &self.vectors[i * self.dim()..(i + 1) * self.dim()])
    }

    pub fn record(&self, record_id: u64) -> Option<ChunkRecord<'_>> {
        Some(ChunkRecord {
            record_id,
            chunk: self.chunks.get(record_id as usize)?,
            vector: self.vector(record_id)?,
        })
    }

    pub fn records(&self) -> impl Iterator<Item = ChunkRecord<'_>> {
        self.chunks
            .iter()
            .zip(self.vectors.chunks_exact(self.dim()))
            .enumerate()
            .map(|(i, (chunk, vector))| ChunkRecord {
                record_id: i as u64,
                chunk,
                vector,
            })
    }

    /// The raw row-major vector block, `len() * dim()` floats.
    pub fn vector_data(&self) -> &[f32] {
        &self.vectors
    }

    /// Appends records, assigning consecutive ids in argument order. Either
    /// all records are inserted or none.
    pub fn insert(
        &mut self,
        chunks: Vec<Chunk>,
        vectors: Vec<EmbeddingVector>,
    ) -> Result<Vec<u64>, StoreError> {
        if chunks.len() != vectors.len() {
            return Err(StoreError::LengthMismatch {
                chunks: chunks.len(),
                vectors: vectors.len(),
            });
        }
        if let Some(v) = vectors.iter().find(|v| v.dim() != self.dim()) {
            return Err(StoreError::DimensionMismatch {
                expected: self.dim(),
                got: v.dim(),
            });
        }
        let first = self.len() as u64;
        let ids = (first..first + chunks.len() as u64).collect();
        self.vectors.reserve(vectors.len() * self.dim());
        for v in vectors {
            self.vectors.extend_from_slice(v.as_slice());
        }
        self.chunks.extend(chunks);
        Ok(ids)
    }

    fn check_query(&self, query: &EmbeddingVector) -> Result<(), StoreError> {
        if query.dim() != self.dim() {
            return Err(StoreError::DimensionMismatch {
                expected: self.dim(),
                got: query.dim(),
            });
        }
        Ok(())
    }

    pub(crate) fn score(&self, query: &[f32], record_id: u64) -> f64 {
        let i = record_id as usize * self.dim();
        dot(query, &self.vectors[i..i + self.dim()])
    }

    fn passes(&self, filter: Option<&FilterPredicate>, record_id: u64) -> bool {
        filter.is_none_or(|f| f.matches(&self.chunks[record_id as usize].metadata))
    }

    fn hits(&self, scored: Vec<(f64, u64)>) -> Vec<RetrievalHit> {
        scored
            .into_iter()
            .map(|(score, record_id)| RetrievalHit {
                record_id,
                score,
                chunk: self.chunks[record_id as usize].clone(),
            })
            .collect()
    }

    /// Exact top-k. Records failing `filter` are removed from the candidate
    /// set before any scoring happens.
    pub fn search_flat(
        &self,
        query: &EmbeddingVector,
        k: usize,
        filter: Option<&FilterPredicate>,
    ) -> Result<Vec<RetrievalHit>, StoreError> {
        self.check_query(query)?;
        let q = query.as_slice();
        let scored: Vec<(f64, u64)> = (0..self.len() as u64)
            .filter(|&id| self.passes(filter, id))
            .map(|id| (self.score(q, id), id))
            .collect();
        Ok(self.hits(top_k(scored, k)))
    }

    /// Builds (or rebuilds) the HNSW index over every current record, seeded
    /// from the store's recorded `ann_seed`.
    pub fn build_ann_index(&mut self, params: HnswParams) -> Result<(), StoreError> {
        if self.is_empty() {
            return Err(StoreError::EmptyStore);
        }
        self.index = Some(HnswIndex::build(
            &self.vectors,
            self.dim(),
            params,
            self.config.ann_seed,
        ));
        Ok(())
    }

    pub fn ann_index(&self) -> Option<&HnswIndex> {
        self.index.as_ref()
    }

    /// True when an index exists and covers every record.
    pub fn ann_ready(&self) -> bool {
        self.index.as_ref().is_some_and(|ix| ix.len() == self.len())
    }

    /// Approximate top-k through the HNSW graph.
    ///
    /// With a filter, failing records are still traversed but never enter
    /// the result set. If the traversal yields fewer than
    /// `min(k, matching records)` hits the search falls back to an exact
    /// scan, so the hit count always equals the flat search's.
    pub fn search_ann(
        &self,
        query: &EmbeddingVector,
        k: usize,
        ef_search: usize,
        filter: Option<&FilterPredicate>,
    ) -> Result<Vec<RetrievalHit>, StoreError> {
        self.check_query(query)?;
        if !self.ann_ready() {
            return Err(StoreError::StaleIndex);
        }
        let index = self.index.as_ref().expect("checked by ann_ready");
        if k == 0 {
            return Ok(Vec::new());
        }
        let q = query.as_slice();
        let found = index.search(&self.vectors, q, k, ef_search.max(k), |id| {
            self.passes(filter, id as u64)
        });

        let wanted = match filter {
            None => k.min(self.len()),
            Some(_) => k.min(
                (0..self.len() as u64)
                    .filter(|&id| self.passes(filter, id))
                    .count(),
            ),
        };
        if found.len() < wanted {
            return self.search_flat(query, k, filter);
        }

        let scored = found
            .into_iter()
            .map(|id| (self.score(q, id as u64), id as u64))
            .collect();
        Ok(self.hits(top_k(scored, k)))
    }

    pub(crate) fn from_parts(
        config: StoreConfig,
        chunks: Vec<Chunk>,
        vectors: Vec<f32>,
        index: Option<HnswIndex>,
    ) -> Self {
        Self {
            config,
            chunks,
            vectors,
            index,
        }
    }
}

fn top_k(mut scored: Vec<(f64, u64)>, k: usize) -> Vec<(f64, u64)> {
    let cmp = |a: &(f64, u64), b: &(f64, u64)| rank_order(*a, *b);
    if k == 0 {
        return Vec::new();
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    scored
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::EmbedderSpec;
    use crate::metadata::{MetaValue, Metadata};

    pub(crate) fn chunk(i: usize, year: i64) -> Chunk {
        let mut metadata = Metadata::new();
        metadata.insert("year".into(), MetaValue::Int(year));
        Chunk {
            doc_id: format!("d{i}"),
            index: 0,
            token_start: 0,
            token_end: 1,
            text: format!("chunk {i}"),
            metadata,
        }
    }

    fn unit(v: &[f32]) -> EmbeddingVector {
        EmbeddingVector::normalize(v.to_vec()).unwrap()
    }

    fn store(dim: usize) -> Store {
        Store::create(StoreConfig::new(
            EmbedderSpec::reference(dim),
            ChunkParams::default(),
        ))
        .unwrap()
    }

    #[test]
    fn create_and_empty_search() {
        let s = store(4);
        assert_eq!(s.len(), 0);
        assert_eq!(s.meta().count, 0);
        assert!(s
            .search_flat(&unit(&[1., 0., 0., 0.]), 3, None)
            .unwrap()
            .is_empty());
        assert!(matches!(
            Store::create(StoreConfig::new(
                EmbedderSpec::reference(0),
                ChunkParams::default()
            )),
            Err(StoreError::InvalidDimension)
        ));
    }

    #[test]
    fn insert_assigns_dense_ids() {
        let mut s = store(2);
        let ids = s
            .insert(
                vec![chunk(0, 2020), chunk(1, 2020), chunk(2, 2021)],
                vec![unit(&[1., 0.]), unit(&[0., 1.]), unit(&[1., 1.])],
            )
            .unwrap();
        assert_eq!(ids, vec![0, 1, 2]);
        assert_eq!(s.insert(vec![], vec![]).unwrap(), Vec::<u64>::new());
        assert_eq!(s.len(), 3);
        assert_eq!(s.record(2).unwrap().chunk.doc_id, "d2");
    }

    #[test]
    fn insert_errors() {
        let mut s = store(8);
        assert!(matches!(
            s.insert(vec![chunk(0, 1)], vec![unit(&[1.; 7])]),
            Err(StoreError::DimensionMismatch {
                expected: 8,
                got: 7
            })
        ));
        assert!(matches!(
            s.insert(vec![chunk(0, 1)], vec![]),
            Err(StoreError::LengthMismatch { .. })
        ));
        assert_eq!(s.len(), 0);
    }

    #[test]
    fn identity_and_ties() {
        let mut s = store(2);
        let v = unit(&[0.6, 0.8]);
        s.insert(
            vec![chunk(0, 1), chunk(1, 1), chunk(2, 1)],
            vec![unit(&[1., 0.]), v.clone(), v.clone()],
        )
        .unwrap();
        let hits = s.search_flat(&v, 1, None).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].record_id, 1);
        assert!((hits[0].score - 1.0).abs() < 1e-6);

        let all = s.search_flat(&v, 10, None).unwrap();
        let ids: Vec<u64> = all.iter().map(|h| h.record_id).collect();
        assert_eq!(ids, vec![1, 2, 0]);
    }

    #[test]
    fn filter_restricts_candidates() {
        let mut s = store(2);
        s.insert(
            vec![chunk(0, 2019), chunk(1, 2020), chunk(2, 2019), chunk(3, 2020)],
            vec![
                unit(&[1., 0.]),
                unit(&[0., 1.]),
                unit(&[1., 0.1]),
                unit(&[0.5, 0.5]),
            ],
        )
        .unwrap();
        let f = FilterPredicate::new(vec![Clause::new("year", CmpOp::Eq, 2020i64)]).unwrap();
        let hits = s.search_flat(&unit(&[1., 0.]), 3, Some(&f)).unwrap();
        assert_eq!(hits.len(), 2);
        assert!(hits
            .iter()
            .all(|h| h.chunk.metadata["year"] == MetaValue::Int(2020)));
        assert_eq!(hits[0].record_id, 3);
    }

    #[test]
    fn ann_lifecycle() {
        let mut s = store(2);
        let q = unit(&[1., 0.]);
        assert!(matches!(
            s.build_ann_index(HnswParams::default()),
            Err(StoreError::EmptyStore)
        ));
        s.insert(vec![chunk(0, 1)], vec![unit(&[0.3, 0.7])]).unwrap();
        assert!(matches!(
            s.search_ann(&q, 1, 16, None),
            Err(StoreError::StaleIndex)
        ));
        s.build_ann_index(HnswParams::default()).unwrap();
        let hits = s.search_ann(&q, 1, 16, None).unwrap();
        assert_eq!(hits[0].record_id, 0);

        s.insert(vec![chunk(1, 1)], vec![q.clone()]).unwrap();
        assert!(!s.ann_ready());
        assert!(matches!(
            s.search_ann(&q, 1, 16, None),
            Err(StoreError::StaleIndex)
        ));
        s.build_ann_index(HnswParams::default()).unwrap();
        let hits = s.search_ann(&q, 5, 16, None).unwrap();
        assert_eq!(
            hits.iter().map(|h| h.record_id).collect::<Vec<_>>(),
            vec![1, 0]
        );
    }
}
