//! Browser bindings for three interactive views over `rag-core`:
//!
//! - `chunkText` shows how a text is cut into overlapping token windows.
//! - `exploreQuery` indexes a few pasted documents, runs a query and shows
//!   which ranked passages fit the prompt budget.
//! - `needleSweep` runs a small needle-in-a-haystack parameter sweep.
//!
//! Every export takes plain arguments or a JSON request and returns a JSON
//! string. The `*_json` functions hold the logic and are tested natively.

use rag_core::embed::DEFAULT_REFERENCE_DIM;
use rag_core::engine::CHUNK_SEPARATOR_COST;
use rag_core::eval::{run_sweep, EvalError, SweepConfig};
use rag_core::{
    assemble_prompt, chunk_document, normalize_text, retrieve, tokenize, ChunkParams, Document, EmbedError,
    Embedder, EngineError, ExtractiveStub, Metadata, PromptBudget, ReferenceEmbedder, RetrievalParams, Store,
    StoreConfig, StoreError,
};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use wasm_bindgen::prelude::*;

/// Keeps a sweep from freezing the page.
const MAX_SWEEP_TOKENS: usize = 200_000;
const MAX_SWEEP_GRID: usize = 256;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("bad request: {0}")]
    Request(#[from] serde_json::Error),
    #[error("chunk_size must be at least 1 and overlap below it (got {chunk_size}/{overlap})")]
    ChunkParams { chunk_size: usize, overlap: usize },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn chunk_params(chunk_size: usize, overlap: usize) -> Result<ChunkParams, DemoError> {
    ChunkParams::new(chunk_size, overlap).map_err(|_| DemoError::ChunkParams { chunk_size, overlap })
}

fn to_js(r: Result<String, DemoError>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = chunkText)]
pub fn chunk_text(text: &str, chunk_size: usize, overlap: usize) -> Result<String, JsError> {
    to_js(chunk_text_json(text, chunk_size, overlap))
}

#[wasm_bindgen(js_name = exploreQuery)]
pub fn explore_query(request: &str) -> Result<String, JsError> {
    to_js(explore_query_json(request))
}

#[wasm_bindgen(js_name = needleSweep)]
pub fn needle_sweep(request: &str) -> Result<String, JsError> {
    to_js(needle_sweep_json(request))
}

pub fn chunk_text_json(text: &str, chunk_size: usize, overlap: usize) -> Result<String, DemoError> {
    let params = chunk_params(chunk_size, overlap)?;
    let doc = Document {
        id: "text".into(),
        text: normalize_text(text),
        metadata: Metadata::new(),
        source_path: String::new(),
    };
    let chunks: Vec<_> = chunk_document(&doc, params)
        .into_iter()
        .map(|c| {
            json!({
                "index": c.index,
                "token_start": c.token_start,
                "token_end": c.token_end,
                "text": c.text,
            })
        })
        .collect();
    Ok(json!({
        "token_count": tokenize(&doc.text).len(),
        "stride": params.stride(),
        "chunks": chunks,
    })
    .to_string())
}

#[derive(Debug, Deserialize)]
struct PastedDocument {
    id: String,
    text: String,
}

fn default_chunk_size() -> usize {
    64
}
fn default_overlap() -> usize {
    8
}
fn default_top_n() -> usize {
    8
}
fn default_window() -> usize {
    1024
}
fn default_reserve() -> usize {
    256
}
fn default_dim() -> usize {
    DEFAULT_REFERENCE_DIM
}

#[derive(Debug, Deserialize)]
struct ExploreRequest {
    documents: Vec<PastedDocument>,
    query: String,
    #[serde(default = "default_chunk_size")]
    chunk_size: usize,
    #[serde(default = "default_overlap")]
    overlap: usize,
    #[serde(default = "default_top_n")]
    top_n: usize,
    #[serde(default)]
    min_score: f64,
    #[serde(default = "default_window")]
    context_window: usize,
    #[serde(default = "default_reserve")]
    answer_reserve: usize,
    #[serde(default = "default_dim")]
    dim: usize,
}

#[derive(Debug, Serialize)]
struct ExploredHit {
    rank: usize,
    label: String,
    score: f64,
    cost: usize,
    included: bool,
    text: String,
}

pub fn explore_query_json(request: &str) -> Result<String, DemoError> {
    let req: ExploreRequest = serde_json::from_str(request)?;
    if req.documents.is_empty() {
        return Err(DemoError::Invalid("add at least one document".into()));
    }
    if req.dim == 0 || req.dim > 1 << 16 {
        return Err(DemoError::Invalid(format!("dim {} out of range", req.dim)));
    }
    let params = chunk_params(req.chunk_size, req.overlap)?;
    let embedder = ReferenceEmbedder::new(req.dim);
    let budget = PromptBudget::for_window(req.context_window, req.answer_reserve)?;

    let chunks: Vec<_> = req
        .documents
        .iter()
        .map(|d| Document {
            id: d.id.clone(),
            text: normalize_text(&d.text),
            metadata: Metadata::new(),
            source_path: String::new(),
        })
        .flat_map(|d| chunk_document(&d, params))
        .collect();
    let chunk_count = chunks.len();
    let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
    let vectors = embedder.embed_batch(&texts)?;
    let mut store = Store::create(StoreConfig::new(embedder.spec().clone(), params))?;
    store.insert(chunks, vectors)?;

    let retrieval = RetrievalParams {
        top_n: req.top_n,
        min_score: req.min_score,
        ..Default::default()
    };
    let hits = retrieve(&store, &req.query, &retrieval, &embedder)?;
    let bundle = assemble_prompt(&hits, &req.query, &budget)?;
    let explored: Vec<ExploredHit> = hits
        .iter()
        .enumerate()
        .map(|(i, h)| ExploredHit {
            rank: i + 1,
            label: h.chunk.label(),
            score: h.score,
            cost: tokenize(&h.chunk.text).len() + CHUNK_SEPARATOR_COST,
            included: bundle.included_hits.iter().any(|x| x.record_id == h.record_id),
            text: h.chunk.text.clone(),
        })
        .collect();

    Ok(json!({
        "chunk_count": chunk_count,
        "hits": explored,
        "budget": {
            "context_window": budget.context_window,
            "answer_reserve": budget.answer_reserve,
            "template_cost": budget.template_cost,
            "prompt_limit": budget.prompt_limit(),
        },
        "total_tokens": bundle.total_tokens,
        "prompt": bundle.render(),
        "answer": ExtractiveStub::answer_text(&bundle),
    })
    .to_string())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct SweepRequest {
    n_docs: Option<usize>,
    doc_tokens: Option<usize>,
    n_needles: Option<usize>,
    chunk_sizes: Option<Vec<usize>>,
    overlaps: Option<Vec<usize>>,
    top_ns: Option<Vec<usize>>,
    context_windows: Option<Vec<usize>>,
    trials: Option<usize>,
    seed: Option<u64>,
    dim: Option<usize>,
    answer_reserve: Option<usize>,
}

impl SweepRequest {
    /// Fills gaps with a grid small enough for a page to run in a second or two.
    fn into_config(self) -> SweepConfig {
        let base = SweepConfig::default();
        SweepConfig {
            n_docs: self.n_docs.unwrap_or(40),
            doc_tokens: self.doc_tokens.unwrap_or(300),
            n_needles: self.n_needles.unwrap_or(20),
            chunk_sizes: self.chunk_sizes.unwrap_or_else(|| vec![64, 128, 256]),
            overlaps: self.overlaps.unwrap_or_else(|| vec![0, 32]),
            top_ns: self.top_ns.unwrap_or_else(|| vec![1, 4]),
            context_windows: self.context_windows.unwrap_or_else(|| vec![1024, 4096]),
            trials: self.trials.unwrap_or(1),
            seed: self.seed.unwrap_or(7),
            dim: self.dim.unwrap_or(base.dim),
            answer_reserve: self.answer_reserve.unwrap_or(base.answer_reserve),
        }
    }
}

pub fn needle_sweep_json(request: &str) -> Result<String, DemoError> {
    let req: SweepRequest = if request.trim().is_empty() {
        SweepRequest::default()
    } else {
        serde_json::from_str(request)?
    };
    let config = req.into_config();
    config.validate()?;
    let tokens = config.n_docs.saturating_mul(config.doc_tokens);
    if tokens > MAX_SWEEP_TOKENS {
        return Err(DemoError::Invalid(format!(
            "corpus of {tokens} tokens is too large for the browser (limit {MAX_SWEEP_TOKENS})"
        )));
    }
    if config.grid_size() > MAX_SWEEP_GRID {
        return Err(DemoError::Invalid(format!(
            "{} configurations is too many (limit {MAX_SWEEP_GRID})",
            config.grid_size()
        )));
    }
    let result = run_sweep(&config)?;
    Ok(json!({
        "config": result.config,
        "rows": result.rows,
        "csv": result.to_csv()?,
    })
    .to_string())
}
