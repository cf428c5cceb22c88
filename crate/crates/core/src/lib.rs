//! Core of a self-hosted retrieval-augmented generation stack.
//!
//! The pipeline runs in this order:
//!
//! - [`ingest`] loads text, Markdown and HTML documents listed in a JSONL
//!   manifest and attaches their metadata.
//! - [`chunker`] cuts each document into overlapping token windows.
//! - [`embed`] maps chunk and query text to unit-norm vectors.
//! - [`store`] keeps chunk records, answers exact or HNSW top-k queries with
//!   metadata pre-filtering, and persists itself to a directory.
//! - [`engine`] retrieves, packs passages into a token budget, calls a
//!   generation backend and returns the answer with its sources.
//! - [`eval`] measures retrieval recall on synthetic needle corpora and
//!   sweeps chunking and prompt parameters.

pub mod chunker;
pub mod embed;
pub mod engine;
pub mod eval;
pub mod ingest;
pub mod metadata;
pub mod store;

pub use chunker::{chunk_document, tokenize, Chunk, ChunkParams};
pub use embed::{cosine, EmbedError, Embedder, EmbedderSpec, EmbeddingVector, ReferenceEmbedder};
pub use engine::{
    answer_query, assemble_prompt, generate, retrieve, Answer, EngineError, ExtractiveStub,
    GenerationBackend, PromptBudget, PromptBundle, RetrievalParams,
};
pub use ingest::{normalize_text, parse_manifest, Document, Manifest, ManifestEntry};
pub use metadata::{MetaValue, Metadata};
pub use store::{FilterPredicate, HnswParams, RetrievalHit, Store, StoreConfig, StoreError, StoreMeta};
