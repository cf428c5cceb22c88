//! HTTP adapters for externally hosted embedding and chat models.
//!
//! Both use blocking clients and must run off the async runtime (the job
//! worker thread or `spawn_blocking`).

use std::io::{BufRead, BufReader};
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use rag_core::embed::EmbedError;
use rag_core::engine::{GenerationBackend, GenerationError};
use rag_core::{Embedder, EmbedderSpec, EmbeddingVector, PromptBundle};
use serde::Deserialize;
use serde_json::{json, Value};

pub const DEFAULT_GENERATION_TIMEOUT: Duration = Duration::from_secs(120);
const EMBED_BATCH: usize = 64;
const EMBED_TIMEOUT: Duration = Duration::from_secs(60);

/// Counting semaphore bounding concurrent requests.
struct Permits {
    free: Mutex<usize>,
    cond: Condvar,
}

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock();
        while *free == 0 {
            self.cond.wait(&mut free);
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock() += 1;
        self.0.cond.notify_one();
    }
}

/// Client for an embeddings endpoint taking `{"input": [...], "model": id}`
/// and answering `{"data": [{"embedding": [...]}, ...]}`.
pub struct RemoteEmbedder {
    spec: EmbedderSpec,
    endpoint: String,
    model: String,
    client: reqwest::blocking::Client,
    permits: Permits,
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f32>,
}

impl RemoteEmbedder {
    /// Spec id for a remote model, also the selector string that recreates it.
    pub fn spec_id(model: &str, endpoint: &str) -> String {
        format!("remote:{model}@{endpoint}")
    }

    /// Parses `remote:MODEL@URL`.
    pub fn parse_id(id: &str) -> Option<(&str, &str)> {
        id.strip_prefix("remote:")?.split_once('@')
    }

    /// Connects with a known dimension.
    pub fn new(model: &str, endpoint: &str, dim: usize, max_in_flight: usize) -> Self {
        Self {
            spec: EmbedderSpec::new(Self::spec_id(model, endpoint), dim),
            endpoint: endpoint.to_owned(),
            model: model.to_owned(),
            client: reqwest::blocking::Client::builder()
                .timeout(EMBED_TIMEOUT)
                .build()
                .expect("HTTP client builds"),
            permits: Permits::new(max_in_flight),
        }
    }

    /// Connects and discovers the dimension with one probe request.
    pub fn probe(model: &str, endpoint: &str, max_in_flight: usize) -> Result<Self, EmbedError> {
        let mut e = Self::new(model, endpoint, 0, max_in_flight);
        let first = e.request(&["dimension probe"])?;
        let dim = first.first().map(Vec::len).unwrap_or(0);
        if dim == 0 {
            return Err(EmbedError::BackendUnavailable("endpoint returned no embedding".into()));
        }
        e.spec.dim = dim;
        Ok(e)
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let _permit = self.permits.acquire();
        let unavailable = |e: String| EmbedError::BackendUnavailable(e);
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&json!({ "input": texts, "model": self.model }))
            .send()
            .map_err(|e| unavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(unavailable(format!("HTTP {}", resp.status())));
        }
        let body: EmbeddingsResponse = resp.json().map_err(|e| unavailable(e.to_string()))?;
        if body.data.len() != texts.len() {
            return Err(unavailable(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                body.data.len()
            )));
        }
        Ok(body.data.into_iter().map(|d| d.embedding).collect())
    }
}

impl Embedder for RemoteEmbedder {
    fn spec(&self) -> &EmbedderSpec {
        &self.spec
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if let Some(i) = texts.iter().position(|t| t.split_whitespace().next().is_none()) {
            return Err(EmbedError::EmptyText { index: Some(i) });
        }
        let mut out = Vec::with_capacity(texts.len());
        for (batch_no, batch) in texts.chunks(EMBED_BATCH).enumerate() {
            for (j, raw) in self.request(batch)?.into_iter().enumerate() {
                let index = batch_no * EMBED_BATCH + j;
                if raw.len() != self.spec.dim {
                    return Err(EmbedError::DimensionMismatch {
                        expected: self.spec.dim,
                        got: raw.len(),
                    });
                }
                out.push(
                    EmbeddingVector::normalize(raw)
                        .map_err(|_| EmbedError::ZeroVector { index: Some(index) })?,
                );
            }
        }
        Ok(out)
    }
}

/// Streaming client for a chat-completions style endpoint.
///
/// Sends `{"model", "messages", "stream": true}` and reads line-delimited
/// events. Lines may be SSE (`data: {...}`) or bare JSON; the delta is taken
/// from `choices[0].delta.content`, `choices[0].text`, `message.content` or
/// `response`, whichever is present. `data: [DONE]` ends the stream.
pub struct RemoteGenerator {
    id: String,
    endpoint: String,
    model: String,
    timeout: Duration,
    client: reqwest::blocking::Client,
}

impl RemoteGenerator {
    pub fn new(endpoint: &str, model: &str, timeout: Duration) -> Self {
        Self {
            id: format!("remote:{model}@{endpoint}"),
            endpoint: endpoint.to_owned(),
            model: model.to_owned(),
            timeout,
            client: reqwest::blocking::Client::builder()
                .timeout(timeout)
                .build()
                .expect("HTTP client builds"),
        }
    }

    fn map_err(&self, e: reqwest::Error) -> GenerationError {
        if e.is_timeout() {
            GenerationError::Timeout(self.timeout)
        } else {
            GenerationError::BackendUnavailable(e.to_string())
        }
    }
}

/// True if a body read failed because the client deadline passed.
fn is_timeout(e: &std::io::Error) -> bool {
    if e.kind() == std::io::ErrorKind::TimedOut {
        return true;
    }
    let mut source: Option<&(dyn std::error::Error + 'static)> = e.get_ref().map(|r| r as _);
    while let Some(err) = source {
        if let Some(re) = err.downcast_ref::<reqwest::Error>() {
            if re.is_timeout() {
                return true;
            }
        }
        if let Some(io) = err.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::TimedOut {
                return true;
            }
        }
        source = err.source();
    }
    false
}

/// Extracts the token delta from one streamed line. `None` means the line
/// carries no text; `Some(Err(()))` marks the end of the stream.
fn line_delta(line: &str) -> Option<Result<String, ()>> {
    let line = line.trim();
    let payload = line.strip_prefix("data:").map(str::trim).unwrap_or(line);
    if payload.is_empty() || payload.starts_with(':') || line.starts_with("event:") {
        return None;
    }
    if payload == "[DONE]" {
        return Some(Err(()));
    }
    let v: Value = serde_json::from_str(payload).ok()?;
    let choice = &v["choices"][0];
    let text = choice["delta"]["content"]
        .as_str()
        .or_else(|| choice["text"].as_str())
        .or_else(|| v["message"]["content"].as_str())
        .or_else(|| v["response"].as_str())?;
    Some(Ok(text.to_owned()))
}

impl GenerationBackend for RemoteGenerator {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(
        &self,
        bundle: &PromptBundle,
        on_token: &mut dyn FnMut(&str),
    ) -> Result<String, GenerationError> {
        let body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": bundle.system_instruction},
                {"role": "user", "content": bundle.user_message()},
            ],
            "stream": true,
        });
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&body)
            .send()
            .map_err(|e| self.map_err(e))?;
        if !resp.status().is_success() {
            return Err(GenerationError::BackendUnavailable(format!(
                "HTTP {}",
                resp.status()
            )));
        }

        let mut text = String::new();
        for line in BufReader::new(resp).lines() {
            let line = line.map_err(|e| {
                if is_timeout(&e) {
                    GenerationError::Timeout(self.timeout)
                } else {
                    GenerationError::BackendUnavailable(e.to_string())
                }
            })?;
            match line_delta(&line) {
                Some(Ok(delta)) if !delta.is_empty() => {
                    on_token(&delta);
                    text.push_str(&delta);
                }
                Some(Err(())) => break,
                _ => {}
            }
        }
        Ok(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_stream_lines() {
        assert_eq!(
            line_delta(r#"data: {"choices":[{"delta":{"content":"Hi"}}]}"#),
            Some(Ok("Hi".into()))
        );
        assert_eq!(line_delta("data: [DONE]"), Some(Err(())));
        assert_eq!(line_delta(""), None);
        assert_eq!(line_delta(": keep-alive"), None);
        assert_eq!(line_delta("event: message"), None);
        assert_eq!(
            line_delta(r#"{"message":{"content":" there"},"done":false}"#),
            Some(Ok(" there".into()))
        );
        assert_eq!(line_delta(r#"{"response":"x"}"#), Some(Ok("x".into())));
        assert_eq!(line_delta(r#"data: {"choices":[{"delta":{}}]}"#), None);
    }

    #[test]
    fn remote_ids() {
        let id = RemoteEmbedder::spec_id("bge-small", "http://localhost:8080/v1/embeddings");
        assert_eq!(
            RemoteEmbedder::parse_id(&id),
            Some(("bge-small", "http://localhost:8080/v1/embeddings"))
        );
        assert_eq!(RemoteEmbedder::parse_id("ref-tfidf-v1"), None);
    }

    #[test]
    fn unreachable_backends() {
        let g = RemoteGenerator::new("http://127.0.0.1:9/v1/chat", "m", Duration::from_secs(2));
        let bundle = rag_core::assemble_prompt(&[], "q", &Default::default()).unwrap();
        assert!(matches!(
            g.generate(&bundle, &mut |_| {}),
            Err(GenerationError::BackendUnavailable(_))
        ));
        let e = RemoteEmbedder::new("m", "http://127.0.0.1:9/v1/embeddings", 4, 2);
        assert!(matches!(
            e.embed_text("hello"),
            Err(EmbedError::BackendUnavailable(_))
        ));
    }
}
