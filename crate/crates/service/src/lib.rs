//! Multi-user RAG service: corpus management, vectorization, chat sessions
//! and a strictly FIFO generation queue, persisted under one data directory.
//!
//! [`Service`] is the facade used by both the HTTP layer ([`http::router`])
//! and the `rag` command line tool.

pub mod corpus;
pub mod embedders;
pub mod error;
mod fsutil;
pub mod http;
pub mod queue;
pub mod remote;
pub mod service;
pub mod session;

pub use corpus::{CorpusInfo, CorpusState};
pub use embedders::EmbedderSelector;
pub use error::{Result, ServiceError};
pub use queue::{Job, JobEvent, JobSnapshot, JobState};
pub use service::{GenerationConfig, IngestSummary, Service, ServiceConfig, VectorizeRequest};
pub use session::{HistoryEntry, QueryOverrides, Session};
