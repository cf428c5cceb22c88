use std::time::Duration;

use thiserror::Error;

use super::PromptBundle;
use crate::chunker::tokenize;

pub const STUB_BACKEND_ID: &str = "extractive-v1";
const STUB_EXCERPT_TOKENS: usize = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerationError {
    #[error("generation backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("generation timed out after {0:?}")]
    Timeout(Duration),
}

impl GenerationError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::BackendUnavailable(_) => "BackendUnavailable",
            Self::Timeout(_) => "GenerationTimeout",
        }
    }
}

/// A language model reachable for answer generation.
///
/// `generate` streams deltas to `on_token` as they are produced and returns
/// the full text, which must equal the concatenation of the deltas.
pub trait GenerationBackend: Send + Sync {
    fn id(&self) -> &str;

    fn generate(
        &self,
        bundle: &PromptBundle,
        on_token: &mut dyn FnMut(&str),
    ) -> Result<String, GenerationError>;
}

/// Deterministic backend that quotes the opening of each included passage.
#[derive(Debug, Clone, Default)]
pub struct ExtractiveStub {
    token_delay: Option<Duration>,
}

impl ExtractiveStub {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sleeps between streamed deltas, to emulate a slow model.
    pub fn with_token_delay(delay: Duration) -> Self {
        Self {
            token_delay: Some(delay),
        }
    }

    pub fn answer_text(bundle: &PromptBundle) -> String {
        let mut out = format!(
            "Based on {} retrieved passage(s):",
            bundle.included_hits.len()
        );
        for hit in &bundle.included_hits {
            let excerpt: Vec<&str> = tokenize(&hit.chunk.text)
                .into_iter()
                .take(STUB_EXCERPT_TOKENS)
                .collect();
            out.push_str(&format!("\n[{}] {}", hit.chunk.label(), excerpt.join(" ")));
        }
        out
    }
}

/// Splits text into deltas that each end just after a space or newline.
pub fn stream_pieces(text: &str) -> impl Iterator<Item = &str> {
    text.split_inclusive([' ', '\n'])
}

impl GenerationBackend for ExtractiveStub {
    fn id(&self) -> &str {
        STUB_BACKEND_ID
    }

    fn generate(
        &self,
        bundle: &PromptBundle,
        on_token: &mut dyn FnMut(&str),
    ) -> Result<String, GenerationError> {
        let text = Self::answer_text(bundle);
        for piece in stream_pieces(&text) {
            if let Some(d) = self.token_delay {
                std::thread::sleep(d);
            }
            on_token(piece);
        }
        Ok(text)
    }
}
