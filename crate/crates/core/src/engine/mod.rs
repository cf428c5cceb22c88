//! Query answering: retrieve, assemble a prompt under a token budget,
//! generate, and return the answer with the exact passages it was given.

mod backend;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::token_count;
use crate::embed::{EmbedError, Embedder, EmbedderSpec};
use crate::store::{FilterPredicate, RetrievalHit, Store, StoreError, DEFAULT_EF_SEARCH};

pub use backend::{stream_pieces, ExtractiveStub, GenerationBackend, GenerationError, STUB_BACKEND_ID};

pub const DEFAULT_TOP_N: usize = 4;
pub const DEFAULT_CONTEXT_WINDOW: usize = 4096;
pub const DEFAULT_ANSWER_RESERVE: usize = 512;
/// Tokens charged per included passage for its section header.
pub const CHUNK_SEPARATOR_COST: usize = 4;

pub const SYSTEM_INSTRUCTION: &str = "You are a research assistant. Answer the question using only \
the numbered sources below. Cite the sources you use by their [doc#chunk] label. If the sources \
do not contain the answer, say that you do not know.";

const SOURCE_HEADER: &str = "### Source";
const QUESTION_HEADER: &str = "### Question";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error("query embedder {query:?} does not match the store's {store:?}")]
    EmbedderMismatch {
        store: EmbedderSpec,
        query: EmbedderSpec,
    },
    #[error("query and template need {needed} tokens but only {available} are available")]
    QueryTooLarge { needed: usize, available: usize },
    #[error("invalid budget: answer_reserve {answer_reserve} + template_cost {template_cost} must be below context_window {context_window}")]
    InvalidBudget {
        context_window: usize,
        answer_reserve: usize,
        template_cost: usize,
    },
    #[error("top_n must be at least 1")]
    InvalidTopN,
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Embed(e) => e.code(),
            Self::Store(e) => e.code(),
            Self::Generation(e) => e.code(),
            Self::EmbedderMismatch { .. } => "EmbedderMismatch",
            Self::QueryTooLarge { .. } => "QueryTooLarge",
            Self::InvalidBudget { .. } => "InvalidBudget",
            Self::InvalidTopN => "InvalidParams",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalParams {
    pub top_n: usize,
    pub min_score: f64,
    pub filter: Option<FilterPredicate>,
    pub use_ann: bool,
    pub ef_search: usize,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            top_n: DEFAULT_TOP_N,
            min_score: 0.0,
            filter: None,
            use_ann: false,
            ef_search: DEFAULT_EF_SEARCH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBudget {
    pub context_window: usize,
    pub answer_reserve: usize,
    pub template_cost: usize,
}

impl PromptBudget {
    pub fn new(
        context_window: usize,
        answer_reserve: usize,
        template_cost: usize,
    ) -> Result<Self, EngineError> {
        if answer_reserve == 0 || answer_reserve + template_cost >= context_window {
            return Err(EngineError::InvalidBudget {
                context_window,
                answer_reserve,
                template_cost,
            });
        }
        Ok(Self {
            context_window,
            answer_reserve,
            template_cost,
        })
    }

    /// Budget whose template cost is that of the built-in prompt template.
    pub fn for_window(context_window: usize, answer_reserve: usize) -> Result<Self, EngineError> {
        Self::new(context_window, answer_reserve, default_template_cost())
    }

    /// Tokens available to template, query and passages.
    pub fn prompt_limit(&self) -> usize {
        self.context_window - self.answer_reserve
    }
}

impl Default for PromptBudget {
    fn default() -> Self {
        Self::for_window(DEFAULT_CONTEXT_WINDOW, DEFAULT_ANSWER_RESERVE)
            .expect("default budget is valid")
    }
}

/// Token cost of the fixed parts of the rendered prompt.
pub fn default_template_cost() -> usize {
    token_count(SYSTEM_INSTRUCTION) + token_count(QUESTION_HEADER)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_instruction: String,
    pub included_hits: Vec<RetrievalHit>,
    pub query: String,
    pub total_tokens: usize,
}

impl PromptBundle {
    /// The passages block: one `### Source [doc#chunk]` section per included hit.
    pub fn context_block(&self) -> String {
        let mut out = String::new();
        for hit in &self.included_hits {
            out.push_str(&format!(
                "{SOURCE_HEADER} [{}]\n{}\n\n",
                hit.chunk.label(),
                hit.chunk.text
            ));
        }
        out
    }

    /// User turn sent to a chat model: passages followed by the question.
    pub fn user_message(&self) -> String {
        format!("{}{QUESTION_HEADER}\n{}", self.context_block(), self.query)
    }

    /// Single-string form of the whole prompt.
    pub fn render(&self) -> String {
        format!("{}\n\n{}", self.system_instruction, self.user_message())
    }
}

/// Splits a rendered prompt back into `(label, text)` passage sections.
pub fn parse_source_sections(rendered: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut current: Option<(String, Vec<&str>)> = None;
    for line in rendered.lines() {
        if let Some(rest) = line.strip_prefix(SOURCE_HEADER) {
            if let Some((label, body)) = current.take() {
                out.push((label, body.join("\n").trim_end().to_owned()));
            }
            let label = rest.trim().trim_start_matches('[').trim_end_matches(']');
            current = Some((label.to_owned(), Vec::new()));
        } else if line.starts_with(QUESTION_HEADER) {
            if let Some((label, body)) = current.take() {
                out.push((label, body.join("\n").trim_end().to_owned()));
            }
        } else if let Some((_, body)) = current.as_mut() {
            body.push(line);
        }
    }
    if let Some((label, body)) = current {
        out.push((label, body.join("\n").trim_end().to_owned()));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    /// Exactly the passages that were placed in the prompt.
    pub sources: Vec<RetrievalHit>,
    pub backend_id: String,
}

pub fn retrieve(
    store: &Store,
    query_text: &str,
    params: &RetrievalParams,
    embedder: &dyn Embedder,
) -> Result<Vec<RetrievalHit>, EngineError> {
    if params.top_n == 0 {
        return Err(EngineError::InvalidTopN);
    }
    if store.embedder() != embedder.spec() {
        return Err(EngineError::EmbedderMismatch {
            store: store.embedder().clone(),
            query: embedder.spec().clone(),
        });
    }
    let query = embedder.embed_text(query_text)?;
    let filter = params.filter.as_ref();
    let mut hits = if params.use_ann && !store.is_empty() {
        store.search_ann(&query, params.top_n, params.ef_search, filter)?
    } else {
        store.search_flat(&query, params.top_n, filter)?
    };
    hits.retain(|h| h.score >= params.min_score);
    Ok(hits)
}

/// Greedy, rank-ordered packing of hits into the budget.
///
/// Each passage costs its token count plus [`CHUNK_SEPARATOR_COST`]. A
/// passage that does not fit is skipped and packing continues with the next
/// one, so passages are never truncated or reordered.
pub fn assemble_prompt(
    hits: &[RetrievalHit],
    query: &str,
    budget: &PromptBudget,
) -> Result<PromptBundle, EngineError> {
    let limit = budget.prompt_limit();
    let base = budget.template_cost + token_count(query);
    if base > limit {
        return Err(EngineError::QueryTooLarge {
            needed: base,
            available: limit,
        });
    }
    let mut total = base;
    let mut included = Vec::new();
    for hit in hits {
        let cost = token_count(&hit.chunk.text) + CHUNK_SEPARATOR_COST;
        if total + cost <= limit {
            total += cost;
            included.push(hit.clone());
        }
    }
    Ok(PromptBundle {
        system_instruction: SYSTEM_INSTRUCTION.to_owned(),
        included_hits: included,
        query: query.to_owned(),
        total_tokens: total,
    })
}

pub fn generate(
    bundle: &PromptBundle,
    backend: &dyn GenerationBackend,
    on_token: &mut dyn FnMut(&str),
) -> Result<Answer, EngineError> {
    let text = backend.generate(bundle, on_token)?;
    Ok(Answer {
        text,
        sources: bundle.included_hits.clone(),
        backend_id: backend.id().to_owned(),
    })
}

/// Everything a query produced: the prompt that was sent and the answer.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub bundle: PromptBundle,
    pub answer: Answer,
}

pub fn answer_query_streaming(
    store: &Store,
    query_text: &str,
    params: &RetrievalParams,
    budget: &PromptBudget,
    embedder: &dyn Embedder,
    backend: &dyn GenerationBackend,
    on_token: &mut dyn FnMut(&str),
) -> Result<QueryOutcome, EngineError> {
    let hits = retrieve(store, query_text, params, embedder)?;
    let bundle = assemble_prompt(&hits, query_text, budget)?;
    let answer = generate(&bundle, backend, on_token)?;
    Ok(QueryOutcome { bundle, answer })
}

pub fn answer_query(
    store: &Store,
    query_text: &str,
    params: &RetrievalParams,
    budget: &PromptBudget,
    embedder: &dyn Embedder,
    backend: &dyn GenerationBackend,
) -> Result<Answer, EngineError> {
    answer_query_streaming(store, query_text, params, budget, embedder, backend, &mut |_| {})
        .map(|o| o.answer)
}
