//! The service facade shared by the HTTP layer and the CLI.

use std::collections::{BTreeMap, HashMap};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use std::time::Duration;

use parking_lot::{Mutex, RwLock};
use rag_core::engine::{answer_query_streaming, QueryOutcome, DEFAULT_ANSWER_RESERVE, DEFAULT_CONTEXT_WINDOW};
use rag_core::ingest::{load_document, ManifestEntry};
use rag_core::{
    assemble_prompt, chunk_document, generate, parse_manifest, retrieve, ChunkParams, Embedder,
    EmbedderSpec, ExtractiveStub, GenerationBackend, HnswParams, Manifest, PromptBudget, Store,
    StoreConfig, StoreMeta,
};
use serde::{Deserialize, Serialize};

use crate::corpus::{validate_name, CorpusInfo, CorpusSlot, CorpusState};
use crate::embedders::{self, CountingEmbedder, EmbedderSelector};
use crate::error::{Result, ServiceError};
use crate::fsutil;
use crate::queue::{Job, JobFailure, JobOutcome, JobQueue, JobSuccess};
use crate::remote::{RemoteGenerator, DEFAULT_GENERATION_TIMEOUT};
use crate::session::{new_session_id, HistoryEntry, QueryOverrides, Session};

const CORPORA_DIR: &str = "corpora";
const SESSIONS_DIR: &str = "sessions";
const EMBED_BATCH: usize = 512;

#[derive(Debug, Clone)]
pub enum GenerationConfig {
    Stub { token_delay: Option<Duration> },
    Remote { endpoint: String, model: String, timeout: Duration },
}

impl GenerationConfig {
    pub fn remote(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self::Remote {
            endpoint: endpoint.into(),
            model: model.into(),
            timeout: DEFAULT_GENERATION_TIMEOUT,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub default_embedder: EmbedderSelector,
    pub generation: GenerationConfig,
    pub context_window: usize,
    pub answer_reserve: usize,
    /// Upper bound on concurrent requests to a remote embedder.
    pub embed_concurrency: usize,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            default_embedder: EmbedderSelector::Reference {
                dim: rag_core::embed::DEFAULT_REFERENCE_DIM,
            },
            generation: GenerationConfig::Stub { token_delay: None },
            context_window: DEFAULT_CONTEXT_WINDOW,
            answer_reserve: DEFAULT_ANSWER_RESERVE,
            embed_concurrency: 4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VectorizeRequest {
    pub chunk_size: Option<usize>,
    pub overlap: Option<usize>,
    pub embedder: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestFailure {
    pub id: String,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub corpus: CorpusInfo,
    pub added: Vec<String>,
    pub errors: Vec<IngestFailure>,
}

struct Inner {
    config: ServiceConfig,
    corpora_dir: PathBuf,
    sessions_dir: PathBuf,
    corpora: RwLock<BTreeMap<String, Arc<CorpusSlot>>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    embedders: Mutex<HashMap<EmbedderSpec, Arc<dyn Embedder>>>,
    embed_calls: Arc<AtomicU64>,
    backend: Arc<dyn GenerationBackend>,
    budget: PromptBudget,
    queue: JobQueue,
}

/// Cheap to clone; all clones share one registry and one generation queue.
#[derive(Clone)]
pub struct Service {
    inner: Arc<Inner>,
}

impl Service {
    /// Opens (or initializes) a data directory with the configured backend.
    pub fn open(config: ServiceConfig) -> Result<Self> {
        let backend: Arc<dyn GenerationBackend> = match &config.generation {
            GenerationConfig::Stub { token_delay: None } => Arc::new(ExtractiveStub::new()),
            GenerationConfig::Stub {
                token_delay: Some(d),
            } => Arc::new(ExtractiveStub::with_token_delay(*d)),
            GenerationConfig::Remote {
                endpoint,
                model,
                timeout,
            } => Arc::new(RemoteGenerator::new(endpoint, model, *timeout)),
        };
        Self::open_with_backend(config, backend)
    }

    /// Opens with an explicit generation backend.
    pub fn open_with_backend(config: ServiceConfig, backend: Arc<dyn GenerationBackend>) -> Result<Self> {
        let budget = PromptBudget::for_window(config.context_window, config.answer_reserve)?;
        let corpora_dir = config.data_dir.join(CORPORA_DIR);
        let sessions_dir = config.data_dir.join(SESSIONS_DIR);
        std::fs::create_dir_all(&corpora_dir)?;
        std::fs::create_dir_all(&sessions_dir)?;

        let mut corpora = BTreeMap::new();
        for entry in std::fs::read_dir(&corpora_dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if !entry.file_type()?.is_dir() || validate_name(&name).is_err() {
                continue;
            }
            let slot = CorpusSlot::open(entry.path())?;
            corpora.insert(name, Arc::new(slot));
        }

        let mut sessions = HashMap::new();
        let mut last_job = 0u64;
        for entry in std::fs::read_dir(&sessions_dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let session: Session = fsutil::read_json(&path)?;
            last_job = session.history.iter().map(|h| h.job_id).fold(last_job, u64::max);
            sessions.insert(session.session_id.clone(), Arc::new(Mutex::new(session)));
        }
        tracing::info!(
            corpora = corpora.len(),
            sessions = sessions.len(),
            data_dir = %config.data_dir.display(),
            "service state loaded"
        );

        let inner = Arc::new_cyclic(|weak: &Weak<Inner>| {
            let weak = weak.clone();
            Inner {
                config,
                corpora_dir,
                sessions_dir,
                corpora: RwLock::new(corpora),
                sessions: RwLock::new(sessions),
                embedders: Mutex::new(HashMap::new()),
                embed_calls: Arc::new(AtomicU64::new(0)),
                backend,
                budget,
                queue: JobQueue::start(
                    last_job + 1,
                    Box::new(move |job, on_token| match weak.upgrade() {
                        Some(inner) => Service { inner }.run_job(job, on_token),
                        None => JobOutcome {
                            sources: Vec::new(),
                            result: Err(JobFailure::new("ServiceShutdown", "service is shutting down")),
                        },
                    }),
                ),
            }
        });
        Ok(Self { inner })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    pub fn backend_id(&self) -> &str {
        self.inner.backend.id()
    }

    pub fn budget(&self) -> PromptBudget {
        self.inner.budget
    }

    /// Texts embedded since this service was opened.
    pub fn embed_calls(&self) -> u64 {
        self.inner.embed_calls.load(Ordering::Relaxed)
    }

    // Corpora

    fn slot(&self, name: &str) -> Result<Arc<CorpusSlot>> {
        self.inner
            .corpora
            .read()
            .get(name)
            .cloned()
            .ok_or_else(|| ServiceError::CorpusNotFound(name.to_owned()))
    }

    pub fn create_corpus(&self, name: &str) -> Result<CorpusInfo> {
        validate_name(name)?;
        let mut corpora = self.inner.corpora.write();
        if corpora.contains_key(name) {
            return Err(ServiceError::CorpusExists(name.to_owned()));
        }
        let slot = CorpusSlot::create(&self.inner.corpora_dir, name)?;
        let info = slot.data.read().info.clone();
        corpora.insert(name.to_owned(), Arc::new(slot));
        tracing::info!(corpus = name, "corpus created");
        Ok(info)
    }

    pub fn list_corpora(&self) -> Vec<CorpusInfo> {
        let slots: Vec<_> = self.inner.corpora.read().values().cloned().collect();
        slots.iter().map(|s| s.data.read().info.clone()).collect()
    }

    pub fn corpus(&self, name: &str) -> Result<CorpusInfo> {
        Ok(self.slot(name)?.data.read().info.clone())
    }

    /// The loaded store of a vectorized corpus.
    pub fn store(&self, name: &str) -> Result<Arc<Store>> {
        let slot = self.slot(name)?;
        let data = slot.data.read();
        data.store
            .clone()
            .ok_or_else(|| ServiceError::CorpusNotReady(name.to_owned()))
    }

    /// Directory where files uploaded to a corpus are kept.
    pub fn uploads_dir(&self, name: &str) -> Result<PathBuf> {
        Ok(self.slot(name)?.uploads_dir())
    }

    /// Ingests a JSONL manifest whose paths resolve against `base_dir`.
    ///
    /// With `confine` set, manifest paths must be relative and may not
    /// leave `base_dir`. Documents whose ids are already in the corpus are
    /// reported as `DuplicateId` and skipped. Adding to a vectorized corpus
    /// returns it to `ingested`; it must be vectorized again before queries.
    pub fn add_documents(&self, name: &str, manifest: &[u8], base_dir: &Path, confine: bool) -> Result<IngestSummary> {
        let manifest = parse_manifest(manifest)?;
        if confine {
            if let Some(e) = manifest.entries.iter().find(|e| !is_confined(&e.path)) {
                return Err(ServiceError::BadRequest(format!(
                    "document {:?}: path {:?} must be relative to the upload directory",
                    e.id, e.path
                )));
            }
        }
        self.ingest(name, &manifest, base_dir)
    }

    /// Stores uploaded files and ingests them. Without a manifest every file
    /// becomes a document whose id is its file stem and whose metadata is empty.
    pub fn add_uploaded_files(
        &self,
        name: &str,
        files: Vec<(String, Vec<u8>)>,
        manifest: Option<Vec<u8>>,
    ) -> Result<IngestSummary> {
        let uploads = self.uploads_dir(name)?;
        let mut saved = Vec::with_capacity(files.len());
        for (filename, bytes) in files {
            let base = Path::new(&filename)
                .file_name()
                .and_then(|f| f.to_str())
                .filter(|f| !f.starts_with('.'))
                .ok_or_else(|| ServiceError::BadRequest(format!("invalid upload file name {filename:?}")))?
                .to_owned();
            fsutil::write_atomic(&uploads.join(&base), &bytes)?;
            saved.push(base);
        }
        match manifest {
            Some(m) => self.add_documents(name, &m, &uploads, true),
            None => {
                let entries = saved
                    .into_iter()
                    .map(|f| ManifestEntry {
                        id: Path::new(&f)
                            .file_stem()
                            .and_then(|s| s.to_str())
                            .unwrap_or(&f)
                            .to_owned(),
                        path: f,
                        metadata: Default::default(),
                    })
                    .collect();
                self.ingest(name, &Manifest { entries }, &uploads)
            }
        }
    }

    fn ingest(&self, name: &str, manifest: &Manifest, base_dir: &Path) -> Result<IngestSummary> {
        let slot = self.slot(name)?;
        let _admin = slot.admin.lock();
        let existing: std::collections::HashSet<String> =
            slot.data.read().documents.iter().map(|d| d.id.clone()).collect();

        let mut loaded = Vec::new();
        let mut errors = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for entry in &manifest.entries {
            if existing.contains(&entry.id) || !seen.insert(entry.id.clone()) {
                errors.push(IngestFailure {
                    id: entry.id.clone(),
                    code: "DuplicateId".into(),
                    message: format!("document id {:?} already exists in corpus {name:?}", entry.id),
                });
                continue;
            }
            match load_document(entry, base_dir) {
                Ok(doc) => loaded.push(doc),
                Err(e) => errors.push(IngestFailure {
                    id: entry.id.clone(),
                    code: e.code().into(),
                    message: e.to_string(),
                }),
            }
        }
        let added: Vec<String> = loaded.iter().map(|d| d.id.clone()).collect();

        let info = {
            let mut data = slot.data.write();
            if !loaded.is_empty() {
                let mut documents = data.documents.clone();
                documents.extend(loaded);
                slot.save_documents(&documents)?;
                data.documents = documents;
                data.info.document_count = data.documents.len();
                data.info.state = CorpusState::Ingested;
                data.info.store = None;
                data.store = None;
                slot.save_info(&data.info)?;
            }
            data.info.clone()
        };
        tracing::info!(corpus = name, added = added.len(), failed = errors.len(), "documents ingested");
        Ok(IngestSummary {
            corpus: info,
            added,
            errors,
        })
    }

    /// Chunks, embeds and indexes every document, then saves the store.
    pub fn vectorize(&self, name: &str, req: &VectorizeRequest) -> Result<StoreMeta> {
        let slot = self.slot(name)?;
        let _admin = slot.admin.lock();
        let (documents, state) = {
            let data = slot.data.read();
            (data.documents.clone(), data.info.state)
        };
        if state == CorpusState::Empty {
            return Err(ServiceError::WrongState {
                name: name.to_owned(),
                state,
                expected: "ingested",
            });
        }
        let defaults = ChunkParams::default();
        let params = ChunkParams::new(
            req.chunk_size.unwrap_or(defaults.chunk_size()),
            req.overlap.unwrap_or(defaults.overlap()),
        )
        .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let selector = match &req.embedder {
            Some(s) => s.parse()?,
            None => self.inner.config.default_embedder.clone(),
        };
        let embedder = self.embedder_for_selector(&selector)?;

        let chunks: Vec<_> = documents.iter().flat_map(|d| chunk_document(d, params)).collect();
        let mut vectors = Vec::with_capacity(chunks.len());
        for batch in chunks.chunks(EMBED_BATCH) {
            let texts: Vec<&str> = batch.iter().map(|c| c.text.as_str()).collect();
            vectors.extend(embedder.embed_batch(&texts)?);
        }
        let mut store = Store::create(StoreConfig::new(embedder.spec().clone(), params))?;
        store.insert(chunks, vectors)?;
        if !store.is_empty() {
            store.build_ann_index(HnswParams::default())?;
        }
        store.save(&slot.store_dir())?;
        let meta = store.meta();

        let mut data = slot.data.write();
        data.store = Some(Arc::new(store));
        data.info.state = CorpusState::Vectorized;
        data.info.store = Some(meta.clone());
        slot.save_info(&data.info)?;
        tracing::info!(corpus = name, records = meta.count, embedder = %meta.embedder.id, "corpus vectorized");
        Ok(meta)
    }

    // Embedders

    fn wrap(&self, e: Box<dyn Embedder>) -> Arc<dyn Embedder> {
        Arc::new(CountingEmbedder::new(e, Arc::clone(&self.inner.embed_calls)))
    }

    fn embedder_for_selector(&self, sel: &EmbedderSelector) -> Result<Arc<dyn Embedder>> {
        if let EmbedderSelector::Reference { dim } = sel {
            return self.embedder_for_spec(&EmbedderSpec::reference(*dim));
        }
        let built = self.wrap(embedders::from_selector(sel, self.inner.config.embed_concurrency)?);
        let mut cache = self.inner.embedders.lock();
        Ok(Arc::clone(
            cache.entry(built.spec().clone()).or_insert(built),
        ))
    }

    /// Embedder matching a saved store. Building it makes no embedding calls.
    pub fn embedder_for_spec(&self, spec: &EmbedderSpec) -> Result<Arc<dyn Embedder>> {
        if let Some(e) = self.inner.embedders.lock().get(spec) {
            return Ok(Arc::clone(e));
        }
        let built = self.wrap(embedders::from_spec(spec, self.inner.config.embed_concurrency)?);
        let mut cache = self.inner.embedders.lock();
        Ok(Arc::clone(cache.entry(spec.clone()).or_insert(built)))
    }

    // Sessions

    fn session_arc(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.inner
            .sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::SessionNotFound(id.to_owned()))
    }

    fn save_session(&self, session: &Session) -> Result<()> {
        fsutil::write_json(
            &self.inner.sessions_dir.join(format!("{}.json", session.session_id)),
            session,
        )
    }

    pub fn create_session(&self, corpus: &str, defaults: QueryOverrides) -> Result<Session> {
        self.slot(corpus)?;
        let session = Session {
            session_id: new_session_id(),
            corpus: corpus.to_owned(),
            created_at: fsutil::now_ms(),
            defaults,
            history: Vec::new(),
        };
        self.save_session(&session)?;
        self.inner
            .sessions
            .write()
            .insert(session.session_id.clone(), Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    pub fn session(&self, id: &str) -> Result<Session> {
        Ok(self.session_arc(id)?.lock().clone())
    }

    pub fn history(&self, id: &str) -> Result<Vec<HistoryEntry>> {
        Ok(self.session_arc(id)?.lock().history.clone())
    }

    /// Rebinds a session to another corpus. History is kept, retrieval
    /// defaults are cleared.
    pub fn switch_corpus(&self, id: &str, corpus: &str) -> Result<Session> {
        self.slot(corpus)?;
        let arc = self.session_arc(id)?;
        let mut s = arc.lock();
        s.corpus = corpus.to_owned();
        s.defaults = QueryOverrides::default();
        self.save_session(&s)?;
        Ok(s.clone())
    }

    // Queries

    /// Queues a query for the session's corpus and returns its job.
    pub fn submit_query(&self, session_id: &str, text: &str, overrides: QueryOverrides) -> Result<Arc<Job>> {
        let corpus = self.session_arc(session_id)?.lock().corpus.clone();
        if self.corpus(&corpus)?.state != CorpusState::Vectorized {
            return Err(ServiceError::CorpusNotReady(corpus));
        }
        if text.split_whitespace().next().is_none() {
            return Err(ServiceError::BadRequest("query text is empty".into()));
        }
        let job = self
            .inner
            .queue
            .submit(session_id.to_owned(), text.to_owned(), overrides);
        tracing::debug!(job_id = job.id, session = session_id, "query queued");
        Ok(job)
    }

    pub fn job(&self, id: u64) -> Result<Arc<Job>> {
        self.inner.queue.get(id).ok_or(ServiceError::JobNotFound(id))
    }

    /// Jobs queued or running.
    pub fn queue_depth(&self) -> usize {
        self.inner.queue.depth()
    }

    /// Answers a query directly, bypassing sessions and the queue.
    pub fn one_shot(
        &self,
        corpus: &str,
        text: &str,
        overrides: &QueryOverrides,
        on_token: &mut dyn FnMut(&str),
    ) -> Result<QueryOutcome> {
        let store = self.store(corpus)?;
        let embedder = self.embedder_for_spec(store.embedder())?;
        let mut params = rag_core::RetrievalParams::default();
        overrides.apply(&mut params);
        Ok(answer_query_streaming(
            &store,
            text,
            &params,
            &self.inner.budget,
            &*embedder,
            &*self.inner.backend,
            on_token,
        )?)
    }

    fn run_job(&self, job: &Job, on_token: &mut dyn FnMut(&str)) -> JobOutcome {
        let failed = |sources, e: ServiceError| JobOutcome {
            sources,
            result: Err(JobFailure::new(e.code(), e.to_string())),
        };
        let prepared = (|| -> Result<_> {
            let session = self.session_arc(&job.session_id)?;
            let (corpus, params) = {
                let s = session.lock();
                (s.corpus.clone(), s.retrieval_params(&job.overrides))
            };
            let store = self.store(&corpus)?;
            let embedder = self.embedder_for_spec(store.embedder())?;
            let hits = retrieve(&store, &job.query, &params, &*embedder)?;
            let bundle = assemble_prompt(&hits, &job.query, &self.inner.budget)?;
            Ok((session, bundle))
        })();
        let (session, bundle) = match prepared {
            Ok(p) => p,
            Err(e) => return failed(Vec::new(), e),
        };
        let answer = match generate(&bundle, &*self.inner.backend, on_token) {
            Ok(a) => a,
            Err(e) => return failed(bundle.included_hits, e.into()),
        };

        let mut s = session.lock();
        s.history.push(HistoryEntry {
            job_id: job.id,
            query: job.query.clone(),
            answer: answer.clone(),
            timestamp: fsutil::now_ms(),
        });
        if let Err(e) = self.save_session(&s) {
            tracing::warn!(session = %s.session_id, error = %e, "could not persist session history");
        }
        JobOutcome {
            sources: answer.sources,
            result: Ok(JobSuccess {
                text: answer.text,
                backend_id: answer.backend_id,
            }),
        }
    }
}

fn is_confined(path: &str) -> bool {
    let p = Path::new(path);
    !path.is_empty() && p.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confinement() {
        assert!(is_confined("a.txt"));
        assert!(is_confined("./sub/a.txt"));
        assert!(!is_confined("../a.txt"));
        assert!(!is_confined("/etc/passwd"));
        assert!(!is_confined("sub/../../a.txt"));
        assert!(!is_confined(""));
    }
}
