//! Named corpora and their on-disk layout.
//!
//! ```text
//! corpora/{name}/corpus.json     CorpusInfo
//! corpora/{name}/documents.jsonl ingested documents, one per line
//! corpora/{name}/uploads/        files received over HTTP
//! corpora/{name}/store/          the vector store directory
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use rag_core::{Document, Store, StoreMeta};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::fsutil;

const INFO_FILE: &str = "corpus.json";
const DOCUMENTS_FILE: &str = "documents.jsonl";
const UPLOADS_DIR: &str = "uploads";
const STORE_DIR: &str = "store";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusState {
    Empty,
    Ingested,
    Vectorized,
}

impl fmt::Display for CorpusState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Empty => "empty",
            Self::Ingested => "ingested",
            Self::Vectorized => "vectorized",
        })
    }
}

/// Public description of a corpus, also its persisted record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusInfo {
    pub name: String,
    pub state: CorpusState,
    pub created_at: u64,
    pub document_count: usize,
    /// Present once vectorized.
    pub store: Option<StoreMeta>,
}

pub fn validate_name(name: &str) -> Result<()> {
    let ok = (1..=64).contains(&name.len())
        && name
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-');
    if ok {
        Ok(())
    } else {
        Err(ServiceError::InvalidCorpusName(name.to_owned()))
    }
}

pub(crate) struct Corpus {
    pub info: CorpusInfo,
    pub documents: Vec<Document>,
    pub store: Option<Arc<Store>>,
}

/// One registered corpus. `admin` serializes ingestion and vectorization of
/// this corpus; `data` is read-locked by queries.
pub(crate) struct CorpusSlot {
    pub dir: PathBuf,
    pub admin: Mutex<()>,
    pub data: RwLock<Corpus>,
}

impl CorpusSlot {
    pub fn uploads_dir(&self) -> PathBuf {
        self.dir.join(UPLOADS_DIR)
    }

    pub fn store_dir(&self) -> PathBuf {
        self.dir.join(STORE_DIR)
    }

    pub fn create(root: &Path, name: &str) -> Result<Self> {
        let dir = root.join(name);
        std::fs::create_dir_all(dir.join(UPLOADS_DIR))?;
        let info = CorpusInfo {
            name: name.to_owned(),
            state: CorpusState::Empty,
            created_at: fsutil::now_ms(),
            document_count: 0,
            store: None,
        };
        fsutil::write_json(&dir.join(INFO_FILE), &info)?;
        Ok(Self {
            dir,
            admin: Mutex::new(()),
            data: RwLock::new(Corpus {
                info,
                documents: Vec::new(),
                store: None,
            }),
        })
    }

    /// Reads a corpus back. A vectorized corpus loads its saved store; no
    /// text is re-embedded. If the store cannot be loaded the corpus drops
    /// back to `ingested` so it can be vectorized again.
    pub fn open(dir: PathBuf) -> Result<Self> {
        let mut info: CorpusInfo = fsutil::read_json(&dir.join(INFO_FILE))?;
        let docs_path = dir.join(DOCUMENTS_FILE);
        let documents: Vec<Document> = if docs_path.exists() {
            fsutil::read_jsonl(&docs_path)?
        } else {
            Vec::new()
        };
        info.document_count = documents.len();
        let mut store = None;
        if info.state == CorpusState::Vectorized {
            match Store::load(&dir.join(STORE_DIR)) {
                Ok(s) => {
                    info.store = Some(s.meta());
                    store = Some(Arc::new(s));
                }
                Err(e) => {
                    tracing::warn!(corpus = %info.name, error = %e, "saved store unreadable, corpus needs vectorizing");
                    info.state = if documents.is_empty() {
                        CorpusState::Empty
                    } else {
                        CorpusState::Ingested
                    };
                    info.store = None;
                }
            }
        }
        Ok(Self {
            dir,
            admin: Mutex::new(()),
            data: RwLock::new(Corpus {
                info,
                documents,
                store,
            }),
        })
    }

    pub fn save_info(&self, info: &CorpusInfo) -> Result<()> {
        fsutil::write_json(&self.dir.join(INFO_FILE), info)
    }

    pub fn save_documents(&self, documents: &[Document]) -> Result<()> {
        fsutil::write_jsonl(&self.dir.join(DOCUMENTS_FILE), documents)
    }
}
