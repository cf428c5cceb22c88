//! Retrieval-quality measurement on needle corpora and hyperparameter sweeps.
//!
//! A needle's query is its sentinel token; it is found when a retrieved
//! chunk contains that token. Sweeps rebuild chunks and stores for every
//! (chunk size, overlap) pair and trial, then score every (top_n, context
//! window) combination on the same store.

mod needle;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use web_time::Instant;

use crate::chunker::{chunk_document, ChunkParams};
use crate::embed::{EmbedError, Embedder, ReferenceEmbedder, DEFAULT_REFERENCE_DIM};
use crate::engine::{assemble_prompt, retrieve, EngineError, PromptBudget, PromptBundle, RetrievalParams};
use crate::store::{Store, StoreConfig, StoreError};

pub use needle::{build_needle_corpus, filler_vocabulary, Needle, NeedleCorpus, NeedleCorpusParams};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid counts: {0}")]
    InvalidCounts(String),
    #[error("no needles to evaluate")]
    EmptyNeedles,
    #[error("invalid sweep configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("report serialization failed: {0}")]
    Report(String),
}

fn contains_token(text: &str, token: &str) -> bool {
    text.split_whitespace().any(|t| t == token)
}

/// Fraction of needles whose sentinel query retrieves, within the top `k`,
/// a chunk containing the sentinel.
pub fn recall_at_k(
    store: &Store,
    needles: &[Needle],
    k: usize,
    embedder: &dyn Embedder,
) -> Result<f64, EvalError> {
    if needles.is_empty() {
        return Err(EvalError::EmptyNeedles);
    }
    let mut found = 0usize;
    for n in needles {
        let q = embedder.embed_text(&n.sentinel)?;
        let hits = store.search_flat(&q, k, None)?;
        if hits.iter().any(|h| contains_token(&h.chunk.text, &n.sentinel)) {
            found += 1;
        }
    }
    Ok(found as f64 / needles.len() as f64)
}

/// 1-based rank of the best chunk containing the needle in the exact full
/// ranking, or `None` if no chunk contains it.
pub fn hit_rank(store: &Store, needle: &Needle, embedder: &dyn Embedder) -> Result<Option<usize>, EvalError> {
    let q = embedder.embed_text(&needle.sentinel)?;
    let hits = store.search_flat(&q, store.len(), None)?;
    Ok(hits
        .iter()
        .position(|h| contains_token(&h.chunk.text, &needle.sentinel))
        .map(|p| p + 1))
}

/// Chunks, embeds and stores a corpus with the reference embedder.
pub fn vectorize_corpus(
    corpus: &NeedleCorpus,
    params: ChunkParams,
    embedder: &dyn Embedder,
) -> Result<Store, EvalError> {
    let mut store = Store::create(StoreConfig::new(embedder.spec().clone(), params))?;
    let chunks: Vec<_> = corpus
        .documents
        .iter()
        .flat_map(|d| chunk_document(d, params))
        .collect();
    let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
    let vectors = embedder.embed_batch(&texts)?;
    store.insert(chunks, vectors)?;
    Ok(store)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n_docs: usize,
    pub doc_tokens: usize,
    pub n_needles: usize,
    pub chunk_sizes: Vec<usize>,
    pub overlaps: Vec<usize>,
    pub top_ns: Vec<usize>,
    pub context_windows: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub dim: usize,
    pub answer_reserve: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_docs: 100,
            doc_tokens: 500,
            n_needles: 100,
            chunk_sizes: vec![256],
            overlaps: vec![32],
            top_ns: vec![4],
            context_windows: vec![4096],
            trials: 1,
            seed: 0,
            dim: DEFAULT_REFERENCE_DIM,
            answer_reserve: 256,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::InvalidConfig(m));
        for (name, list) in [
            ("chunk_sizes", &self.chunk_sizes),
            ("overlaps", &self.overlaps),
            ("top_ns", &self.top_ns),
            ("context_windows", &self.context_windows),
        ] {
            if list.is_empty() {
                return bad(format!("{name} is empty"));
            }
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.n_needles == 0 {
            return bad("at least one needle is needed".into());
        }
        if self.top_ns.contains(&0) {
            return bad("top_n must be at least 1".into());
        }
        for &size in &self.chunk_sizes {
            for &overlap in &self.overlaps {
                ChunkParams::new(size, overlap).map_err(|e| EvalError::InvalidConfig(e.to_string()))?;
            }
        }
        for &w in &self.context_windows {
            PromptBudget::for_window(w, self.answer_reserve)?;
        }
        Ok(())
    }

    /// Number of rows a sweep over this configuration produces.
    pub fn grid_size(&self) -> usize {
        self.chunk_sizes.len() * self.overlaps.len() * self.top_ns.len() * self.context_windows.len()
    }

    fn trial_seed(&self, trial: usize) -> u64 {
        self.seed
            .wrapping_add((trial as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConfigKey {
    pub chunk_size: usize,
    pub overlap: usize,
    pub top_n: usize,
    pub context_window: usize,
}

/// One configuration's metrics, averaged over needles and trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub chunk_size: usize,
    pub overlap: usize,
    pub top_n: usize,
    pub context_window: usize,
    pub recall_at_1: f64,
    pub recall_at_n: f64,
    /// Fraction of needles whose chunk survived prompt packing.
    pub recall_in_prompt: f64,
    pub mean_hit_rank: f64,
    pub mean_included_hits: f64,
    pub budget_violations: usize,
    /// Wall-clock time per retrieval; the only nondeterministic column.
    pub mean_retrieval_ms: f64,
}

impl SweepRow {
    pub fn key(&self) -> ConfigKey {
        ConfigKey {
            chunk_size: self.chunk_size,
            overlap: self.overlap,
            top_n: self.top_n,
            context_window: self.context_window,
        }
    }

    /// The row without its timing column, for determinism checks.
    pub fn metrics(&self) -> (ConfigKey, [f64; 5], usize) {
        (
            self.key(),
            [
                self.recall_at_1,
                self.recall_at_n,
                self.recall_in_prompt,
                self.mean_hit_rank,
                self.mean_included_hits,
            ],
            self.budget_violations,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub rows: Vec<SweepRow>,
}

#[derive(Default)]
struct Accum {
    at_1: usize,
    at_n: usize,
    in_prompt: usize,
    included: usize,
    violations: usize,
    queries: usize,
    elapsed_ms: f64,
}

pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult, EvalError> {
    run_sweep_observed(config, &mut |_, _, _| {})
}

/// Like [`run_sweep`], calling `observe` with every prompt it assembles.
pub fn run_sweep_observed(
    config: &SweepConfig,
    observe: &mut dyn FnMut(ConfigKey, &PromptBudget, &PromptBundle),
) -> Result<SweepResult, EvalError> {
    config.validate()?;
    let embedder = ReferenceEmbedder::new(config.dim);

    let mut keys = Vec::with_capacity(config.grid_size());
    for &chunk_size in &config.chunk_sizes {
        for &overlap in &config.overlaps {
            for &top_n in &config.top_ns {
                for &context_window in &config.context_windows {
                    keys.push(ConfigKey {
                        chunk_size,
                        overlap,
                        top_n,
                        context_window,
                    });
                }
            }
        }
    }
    keys.sort_unstable();
    keys.dedup();

    let mut accums: Vec<Accum> = keys.iter().map(|_| Accum::default()).collect();
    let mut rank_sums: Vec<(f64, usize)> = vec![(0.0, 0); keys.len()];

    for trial in 0..config.trials {
        let corpus = build_needle_corpus(&NeedleCorpusParams {
            n_docs: config.n_docs,
            doc_tokens: config.doc_tokens,
            n_needles: config.n_needles,
            seed: config.trial_seed(trial),
            dim: config.dim,
        })?;

        let mut chunkings: Vec<(usize, usize)> = keys.iter().map(|k| (k.chunk_size, k.overlap)).collect();
        chunkings.dedup();
        for (chunk_size, overlap) in chunkings {
            let params = ChunkParams::new(chunk_size, overlap).expect("validated");
            let store = vectorize_corpus(&corpus, params, &embedder)?;

            let mut rank_total = 0.0;
            for n in &corpus.needles {
                rank_total += hit_rank(&store, n, &embedder)?.unwrap_or(store.len() + 1) as f64;
            }

            for (i, key) in keys.iter().enumerate() {
                if (key.chunk_size, key.overlap) != (chunk_size, overlap) {
                    continue;
                }
                rank_sums[i].0 += rank_total;
                rank_sums[i].1 += corpus.needles.len();
                let budget = PromptBudget::for_window(key.context_window, config.answer_reserve)?;
                let retrieval = RetrievalParams {
                    top_n: key.top_n,
                    min_score: f64::NEG_INFINITY,
                    ..RetrievalParams::default()
                };
                let acc = &mut accums[i];
                for n in &corpus.needles {
                    let started = Instant::now();
                    let hits = retrieve(&store, &n.sentinel, &retrieval, &embedder)?;
                    acc.elapsed_ms += started.elapsed().as_secs_f64() * 1e3;

                    let holds = |text: &str| contains_token(text, &n.sentinel);
                    acc.at_1 += usize::from(hits.first().is_some_and(|h| holds(&h.chunk.text)));
                    acc.at_n += usize::from(hits.iter().any(|h| holds(&h.chunk.text)));

                    let bundle = assemble_prompt(&hits, &n.sentinel, &budget)?;
                    observe(*key, &budget, &bundle);
                    acc.in_prompt += usize::from(bundle.included_hits.iter().any(|h| holds(&h.chunk.text)));
                    acc.included += bundle.included_hits.len();
                    acc.violations += usize::from(bundle.total_tokens + budget.answer_reserve > budget.context_window);
                    acc.queries += 1;
                }
            }
        }
    }

    let rows = keys
        .iter()
        .zip(accums)
        .zip(rank_sums)
        .map(|((key, acc), (rank_total, rank_count))| {
            let q = acc.queries as f64;
            SweepRow {
                chunk_size: key.chunk_size,
                overlap: key.overlap,
                top_n: key.top_n,
                context_window: key.context_window,
                recall_at_1: acc.at_1 as f64 / q,
                recall_at_n: acc.at_n as f64 / q,
                recall_in_prompt: acc.in_prompt as f64 / q,
                mean_hit_rank: rank_total / rank_count as f64,
                mean_included_hits: acc.included as f64 / q,
                budget_violations: acc.violations,
                mean_retrieval_ms: acc.elapsed_ms / q,
            }
        })
        .collect();
    Ok(SweepResult {
        config: config.clone(),
        rows,
    })
}

impl SweepResult {
    /// CSV with a fixed header: configuration columns, then metric columns.
    pub fn to_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).map_err(|e| EvalError::Report(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| EvalError::Report(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| EvalError::Report(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String, EvalError> {
        serde_json::to_string_pretty(self).map_err(|e| EvalError::Report(e.to_string()))
    }
}

pub const CSV_HEADER: &str = "chunk_size,overlap,top_n,context_window,recall_at_1,recall_at_n,\
recall_in_prompt,mean_hit_rank,mean_included_hits,budget_violations,mean_retrieval_ms";
