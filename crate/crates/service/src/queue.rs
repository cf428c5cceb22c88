//! Single-consumer FIFO generation queue.
//!
//! Jobs receive increasing ids at submission and one worker thread runs them
//! strictly in id order, so a job starts only after its predecessor has
//! finished. Each job keeps an append-only event log that any number of
//! readers can follow, blocking or async.

use std::collections::{HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use rag_core::RetrievalHit;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use crate::fsutil::now_ms;
use crate::session::QueryOverrides;

/// Finished jobs kept in memory for late stream readers.
const RETAINED_FINISHED: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Done | Self::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum JobEvent {
    /// `position` counts unfinished jobs ahead of this one.
    Status { state: JobState, position: usize },
    Token { text: String },
    Sources { hits: Vec<RetrievalHit> },
    Done { text: String, backend_id: String },
    Failed { code: String, message: String },
}

impl JobEvent {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Status { .. } => "status",
            Self::Token { .. } => "token",
            Self::Sources { .. } => "sources",
            Self::Done { .. } => "done",
            Self::Failed { .. } => "failed",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Self::Done { .. } | Self::Failed { .. })
    }

    /// Event payload without the `event` tag.
    pub fn data(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("events serialize");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("event");
        }
        v
    }
}

/// What executing a job produced.
pub struct JobOutcome {
    /// Passages placed in the prompt; empty if the job failed before that.
    pub sources: Vec<RetrievalHit>,
    pub result: Result<JobSuccess, JobFailure>,
}

pub struct JobSuccess {
    pub text: String,
    pub backend_id: String,
}

#[derive(Debug, Clone)]
pub struct JobFailure {
    pub code: String,
    pub message: String,
}

impl JobFailure {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
        }
    }
}

/// Public view of a job. Times are microseconds on the queue's monotonic
/// clock, except `submitted_at` (Unix milliseconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSnapshot {
    pub job_id: u64,
    pub session_id: String,
    pub query: String,
    pub state: JobState,
    pub submitted_at: u64,
    pub started_us: Option<u64>,
    pub finished_us: Option<u64>,
}

struct JobInner {
    state: JobState,
    events: Vec<JobEvent>,
    started_us: Option<u64>,
    finished_us: Option<u64>,
}

pub struct Job {
    pub id: u64,
    pub session_id: String,
    pub query: String,
    pub overrides: QueryOverrides,
    pub submitted_at: u64,
    inner: Mutex<JobInner>,
    cond: Condvar,
    watch: watch::Sender<usize>,
}

impl Job {
    fn push(&self, event: JobEvent) {
        let len = {
            let mut inner = self.inner.lock();
            inner.events.push(event);
            inner.events.len()
        };
        self.cond.notify_all();
        self.watch.send_replace(len);
    }

    pub fn state(&self) -> JobState {
        self.inner.lock().state
    }

    pub fn snapshot(&self) -> JobSnapshot {
        let inner = self.inner.lock();
        JobSnapshot {
            job_id: self.id,
            session_id: self.session_id.clone(),
            query: self.query.clone(),
            state: inner.state,
            submitted_at: self.submitted_at,
            started_us: inner.started_us,
            finished_us: inner.finished_us,
        }
    }

    /// Events from index `from` onwards.
    pub fn events_since(&self, from: usize) -> Vec<JobEvent> {
        let inner = self.inner.lock();
        inner.events.get(from..).map(<[_]>::to_vec).unwrap_or_default()
    }

    /// Blocks until the job has more than `seen` events or `timeout` passes.
    pub fn wait_for_events(&self, seen: usize, timeout: Duration) -> Vec<JobEvent> {
        let deadline = Instant::now() + timeout;
        let mut inner = self.inner.lock();
        while inner.events.len() <= seen {
            if self.cond.wait_until(&mut inner, deadline).timed_out() {
                break;
            }
        }
        inner.events.get(seen..).map(<[_]>::to_vec).unwrap_or_default()
    }

    /// Blocks until the job is done or failed and returns its whole log.
    pub fn wait(&self) -> Vec<JobEvent> {
        let mut inner = self.inner.lock();
        while !inner.state.is_terminal() {
            self.cond.wait(&mut inner);
        }
        inner.events.clone()
    }

    /// Receiver that changes whenever an event is appended.
    pub fn subscribe(&self) -> watch::Receiver<usize> {
        self.watch.subscribe()
    }
}

pub type Executor = Box<dyn Fn(&Job, &mut dyn FnMut(&str)) -> JobOutcome + Send>;

struct QueueState {
    next_id: u64,
    pending: VecDeque<Arc<Job>>,
    running: Option<Arc<Job>>,
    jobs: HashMap<u64, Arc<Job>>,
    finished: VecDeque<u64>,
    shutdown: bool,
}

struct Shared {
    state: Mutex<QueueState>,
    cond: Condvar,
    epoch: Instant,
}

impl Shared {
    fn clock_us(&self) -> u64 {
        self.epoch.elapsed().as_micros() as u64
    }
}

pub struct JobQueue {
    shared: Arc<Shared>,
    worker: Option<JoinHandle<()>>,
}

impl JobQueue {
    /// Starts the worker thread. Ids are assigned from `first_id` upwards.
    pub fn start(first_id: u64, executor: Executor) -> Self {
        let shared = Arc::new(Shared {
            state: Mutex::new(QueueState {
                next_id: first_id.max(1),
                pending: VecDeque::new(),
                running: None,
                jobs: HashMap::new(),
                finished: VecDeque::new(),
                shutdown: false,
            }),
            cond: Condvar::new(),
            epoch: Instant::now(),
        });
        let worker_shared = Arc::clone(&shared);
        let worker = std::thread::Builder::new()
            .name("generation-queue".into())
            .spawn(move || worker_loop(&worker_shared, &executor))
            .expect("spawn queue worker");
        Self {
            shared,
            worker: Some(worker),
        }
    }

    pub fn submit(&self, session_id: String, query: String, overrides: QueryOverrides) -> Arc<Job> {
        let mut st = self.shared.state.lock();
        let id = st.next_id;
        st.next_id += 1;
        let position = st.pending.len() + usize::from(st.running.is_some());
        let (watch, _) = watch::channel(0);
        let job = Arc::new(Job {
            id,
            session_id,
            query,
            overrides,
            submitted_at: now_ms(),
            inner: Mutex::new(JobInner {
                state: JobState::Queued,
                events: Vec::new(),
                started_us: None,
                finished_us: None,
            }),
            cond: Condvar::new(),
            watch,
        });
        job.push(JobEvent::Status {
            state: JobState::Queued,
            position,
        });
        if st.shutdown {
            drop(st);
            finish(&self.shared, &job, shutdown_outcome());
            return job;
        }
        st.jobs.insert(id, Arc::clone(&job));
        st.pending.push_back(Arc::clone(&job));
        drop(st);
        self.shared.cond.notify_all();
        job
    }

    pub fn get(&self, id: u64) -> Option<Arc<Job>> {
        self.shared.state.lock().jobs.get(&id).cloned()
    }

    /// Unfinished jobs, running one included.
    pub fn depth(&self) -> usize {
        let st = self.shared.state.lock();
        st.pending.len() + usize::from(st.running.is_some())
    }

    /// Id the next submission will get.
    pub fn next_id(&self) -> u64 {
        self.shared.state.lock().next_id
    }
}

impl Drop for JobQueue {
    fn drop(&mut self) {
        self.shared.state.lock().shutdown = true;
        self.shared.cond.notify_all();
        if let Some(w) = self.worker.take() {
            if w.thread().id() != std::thread::current().id() {
                let _ = w.join();
            }
        }
    }
}

fn shutdown_outcome() -> JobOutcome {
    JobOutcome {
        sources: Vec::new(),
        result: Err(JobFailure::new("ServiceShutdown", "service is shutting down")),
    }
}

fn worker_loop(shared: &Shared, executor: &Executor) {
    loop {
        let job = {
            let mut st = shared.state.lock();
            loop {
                if st.shutdown {
                    let pending: Vec<_> = st.pending.drain(..).collect();
                    drop(st);
                    for job in pending {
                        finish(shared, &job, shutdown_outcome());
                    }
                    return;
                }
                if let Some(job) = st.pending.pop_front() {
                    st.running = Some(Arc::clone(&job));
                    {
                        let mut inner = job.inner.lock();
                        inner.state = JobState::Running;
                        inner.started_us = Some(shared.clock_us());
                    }
                    for (i, waiting) in st.pending.iter().enumerate() {
                        waiting.push(JobEvent::Status {
                            state: JobState::Queued,
                            position: i + 1,
                        });
                    }
                    break job;
                }
                shared.cond.wait(&mut st);
            }
        };
        job.push(JobEvent::Status {
            state: JobState::Running,
            position: 0,
        });

        let outcome = catch_unwind(AssertUnwindSafe(|| {
            executor(&job, &mut |delta: &str| {
                job.push(JobEvent::Token {
                    text: delta.to_owned(),
                })
            })
        }))
        .unwrap_or_else(|_| JobOutcome {
            sources: Vec::new(),
            result: Err(JobFailure::new("Internal", "job execution panicked")),
        });
        finish(shared, &job, outcome);

        let mut st = shared.state.lock();
        st.running = None;
        st.finished.push_back(job.id);
        while st.finished.len() > RETAINED_FINISHED {
            if let Some(old) = st.finished.pop_front() {
                st.jobs.remove(&old);
            }
        }
    }
}

/// Emits `sources` then the terminal event, and records the finish time
/// before the terminal event becomes visible.
fn finish(shared: &Shared, job: &Job, outcome: JobOutcome) {
    job.push(JobEvent::Sources {
        hits: outcome.sources,
    });
    let (state, event) = match outcome.result {
        Ok(s) => (
            JobState::Done,
            JobEvent::Done {
                text: s.text,
                backend_id: s.backend_id,
            },
        ),
        Err(f) => (
            JobState::Failed,
            JobEvent::Failed {
                code: f.code,
                message: f.message,
            },
        ),
    };
    {
        let mut inner = job.inner.lock();
        inner.state = state;
        inner.finished_us = Some(shared.clock_us());
    }
    job.push(event);
}
