use rag_core::embed::EmbedError;
use rag_core::eval::EvalError;
use rag_core::ingest::ManifestError;
use rag_core::{EngineError, StoreError};
use thiserror::Error;

use crate::corpus::CorpusState;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("corpus {0:?} already exists")]
    CorpusExists(String),
    #[error("corpus {0:?} not found")]
    CorpusNotFound(String),
    #[error("invalid corpus name {0:?}: use 1-64 characters from [a-z0-9_-]")]
    InvalidCorpusName(String),
    #[error("corpus {name:?} is {state}, expected {expected}")]
    WrongState {
        name: String,
        state: CorpusState,
        expected: &'static str,
    },
    #[error("corpus {0:?} is not vectorized yet")]
    CorpusNotReady(String),
    #[error("session {0:?} not found")]
    SessionNotFound(String),
    #[error("job {0} not found")]
    JobNotFound(u64),
    #[error("unknown embedder {0:?}")]
    UnknownEmbedder(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("missing or invalid bearer token")]
    Unauthorized,
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt data file {path}: {reason}")]
    CorruptData { path: String, reason: String },
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::CorpusExists(_) => "CorpusExists",
            Self::CorpusNotFound(_) => "CorpusNotFound",
            Self::InvalidCorpusName(_) => "InvalidCorpusName",
            Self::WrongState { .. } => "WrongState",
            Self::CorpusNotReady(_) => "CorpusNotReady",
            Self::SessionNotFound(_) => "SessionNotFound",
            Self::JobNotFound(_) => "JobNotFound",
            Self::UnknownEmbedder(_) => "UnknownEmbedder",
            Self::BadRequest(_) => "BadRequest",
            Self::Unauthorized => "Unauthorized",
            Self::Manifest(e) => e.code(),
            Self::Engine(e) => e.code(),
            Self::Store(e) => e.code(),
            Self::Embed(e) => e.code(),
            Self::Eval(_) => "EvalError",
            Self::Io(_) => "Io",
            Self::CorruptData { .. } => "CorruptData",
        }
    }

    /// HTTP status for this error.
    pub fn status(&self) -> u16 {
        match self {
            Self::CorpusNotFound(_) | Self::SessionNotFound(_) | Self::JobNotFound(_) => 404,
            Self::CorpusExists(_) | Self::WrongState { .. } | Self::CorpusNotReady(_) => 409,
            Self::Unauthorized => 401,
            Self::InvalidCorpusName(_)
            | Self::UnknownEmbedder(_)
            | Self::BadRequest(_)
            | Self::Manifest(_)
            | Self::Eval(_) => 400,
            Self::Engine(e) => match e {
                EngineError::QueryTooLarge { .. }
                | EngineError::InvalidBudget { .. }
                | EngineError::InvalidTopN
                | EngineError::Embed(EmbedError::EmptyText { .. }) => 400,
                EngineError::Embed(EmbedError::BackendUnavailable(_))
                | EngineError::Generation(_) => 502,
                _ => 500,
            },
            Self::Embed(EmbedError::BackendUnavailable(_)) => 502,
            Self::Embed(EmbedError::EmptyText { .. }) => 400,
            _ => 500,
        }
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
