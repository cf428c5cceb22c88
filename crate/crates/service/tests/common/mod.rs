//! Shared fixtures: an in-process HTTP server, an SSE reader, a scripted
//! upstream for adapter tests, and brute-force oracles.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use rag_core::{Chunk, EmbeddingVector, MetaValue, Metadata, Store, StoreConfig};
use rag_service::{http, Service};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Service router on an ephemeral port, stopped when dropped.
pub struct TestServer {
    pub base: String,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl TestServer {
    pub fn start(service: Service, token: Option<&str>) -> Self {
        let (addr_tx, addr_rx) = std::sync::mpsc::channel::<SocketAddr>();
        let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
        let token = token.map(str::to_owned);
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(4)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                axum::serve(listener, http::router(service, token))
                    .with_graceful_shutdown(async {
                        let _ = stop_rx.await;
                    })
                    .await
                    .unwrap();
            });
        });
        let addr = addr_rx.recv().unwrap();
        Self {
            base: format!("http://{addr}"),
            stop: Some(stop_tx),
            thread: Some(thread),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn client() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(120))
        .build()
        .unwrap()
}

/// Reads a server-sent event stream to its end as (event, data) pairs.
pub fn read_sse(resp: reqwest::blocking::Response) -> Vec<(String, Value)> {
    assert!(resp.status().is_success(), "stream status {}", resp.status());
    let mut out = Vec::new();
    let mut event = String::new();
    let mut data = String::new();
    for line in BufReader::new(resp).lines() {
        let line = line.unwrap();
        if line.is_empty() {
            if !data.is_empty() || !event.is_empty() {
                let name = if event.is_empty() { "message".into() } else { std::mem::take(&mut event) };
                out.push((name, serde_json::from_str(&data).unwrap()));
                data.clear();
            }
            continue;
        }
        if let Some(v) = line.strip_prefix("event:") {
            event = v.trim_start().to_owned();
        } else if let Some(v) = line.strip_prefix("data:") {
            if !data.is_empty() {
                data.push('\n');
            }
            data.push_str(v.strip_prefix(' ').unwrap_or(v));
        }
    }
    out
}

/// Streams a job to completion over HTTP.
pub fn stream_job(client: &reqwest::blocking::Client, base: &str, job_id: u64) -> Vec<(String, Value)> {
    read_sse(client.get(format!("{base}/jobs/{job_id}/stream")).send().unwrap())
}

pub fn token_text(events: &[(String, Value)]) -> String {
    events
        .iter()
        .filter(|(e, _)| e == "token")
        .map(|(_, d)| d["text"].as_str().unwrap())
        .collect()
}

/// Writes `n` small documents plus a manifest into `dir`; returns the manifest bytes.
pub fn write_corpus(dir: &Path, n: usize) -> Vec<u8> {
    let topics = [
        "maritime freight tariffs rose in the second quarter",
        "sovereign debt burdens weigh on developing economies",
        "wheat and fertilizer prices spiked after export bans",
        "container shipping rates eased as port congestion cleared",
        "remittance flows recovered across the region",
    ];
    let mut manifest = String::new();
    for i in 0..n {
        let body = format!(
            "Report {i}. {}.\n\nAnnex {i} lists figures for year {}.",
            topics[i % topics.len()],
            2015 + i % 10
        );
        std::fs::write(dir.join(format!("doc{i}.txt")), body).unwrap();
        manifest.push_str(&format!(
            "{{\"id\":\"doc{i}\",\"path\":\"doc{i}.txt\",\"year\":{},\"lang\":\"{}\"}}\n",
            2015 + i % 10,
            ["en", "fr"][i % 2]
        ));
    }
    manifest.into_bytes()
}

// Oracles

/// Uniform direction on the unit sphere via Box-Muller normals.
pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    let v: Vec<f64> = (0..dim)
        .map(|_| {
            let u1: f64 = rng.random_range(f64::EPSILON..1.0);
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / norm) as f32).collect()
}

pub fn random_metadata(rng: &mut ChaCha8Rng) -> Metadata {
    let mut m = Metadata::new();
    m.insert("year".into(), MetaValue::Int(rng.random_range(2015..2025)));
    m.insert(
        "lang".into(),
        MetaValue::Str(["en", "fr", "es", "ar"][rng.random_range(0..4)].into()),
    );
    m.insert("score".into(), MetaValue::Float(rng.random_range(0.0..1.0)));
    m.insert("public".into(), MetaValue::Bool(rng.random()));
    if rng.random_bool(0.2) {
        m.remove("lang");
    }
    if rng.random_bool(0.1) {
        m.insert("year".into(), MetaValue::Str("unknown".into()));
    }
    m
}

pub fn random_store(n: usize, dim: usize, seed: u64) -> Store {
    let mut r = rng(seed);
    let mut store = Store::create(StoreConfig::new(
        rag_core::EmbedderSpec::new("random", dim),
        rag_core::ChunkParams::default(),
    ))
    .unwrap();
    let mut chunks = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n);
    for i in 0..n {
        chunks.push(Chunk {
            doc_id: format!("doc{}", i / 4),
            index: i % 4,
            token_start: 0,
            token_end: 3,
            text: format!("synthetic record {i}"),
            metadata: random_metadata(&mut r),
        });
        vectors.push(EmbeddingVector::from_unit(random_unit(&mut r, dim)).unwrap());
    }
    store.insert(chunks, vectors).unwrap();
    store
}

/// Scores every accepted record in f64 and sorts by (score desc, id asc).
pub fn brute_force(
    store: &Store,
    query: &[f32],
    k: usize,
    accept: impl Fn(&Metadata) -> bool,
) -> Vec<(u64, f64)> {
    let mut all: Vec<(u64, f64)> = store
        .records()
        .filter(|r| accept(&r.chunk.metadata))
        .map(|r| {
            let s: f64 = query
                .iter()
                .zip(r.vector)
                .map(|(a, b)| *a as f64 * *b as f64)
                .sum();
            (r.record_id, s)
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Scripted HTTP upstream. The handler maps (path, body) to a status and a
/// list of body pieces, written with `gap` between them.
pub struct MockUpstream {
    pub base: String,
    pub requests: Arc<std::sync::Mutex<Vec<Value>>>,
}

pub struct MockReply {
    pub status: u16,
    pub pieces: Vec<String>,
    pub gap: Duration,
}

impl MockReply {
    pub fn json(v: Value) -> Self {
        Self {
            status: 200,
            pieces: vec![v.to_string()],
            gap: Duration::ZERO,
        }
    }
}

impl MockUpstream {
    pub fn start<F>(handler: F) -> Self
    where
        F: Fn(&str, &Value) -> MockReply + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(std::sync::Mutex::new(Vec::new()));
        let handler = Arc::new(handler);
        let log = Arc::clone(&requests);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let handler = Arc::clone(&handler);
                let log = Arc::clone(&log);
                std::thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut request_line = String::new();
                    if reader.read_line(&mut request_line).is_err() {
                        return;
                    }
                    let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_owned();
                    let mut len = 0usize;
                    loop {
                        let mut h = String::new();
                        reader.read_line(&mut h).unwrap();
                        let h = h.trim_end();
                        if h.is_empty() {
                            break;
                        }
                        if let Some((k, v)) = h.split_once(':') {
                            if k.eq_ignore_ascii_case("content-length") {
                                len = v.trim().parse().unwrap();
                            }
                        }
                    }
                    let mut body = vec![0u8; len];
                    reader.read_exact(&mut body).unwrap();
                    let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
                    log.lock().unwrap().push(body.clone());
                    let reply = handler(&path, &body);
                    let head = format!(
                        "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nConnection: close\r\n\r\n",
                        reply.status
                    );
                    if stream.write_all(head.as_bytes()).is_err() {
                        return;
                    }
                    for p in reply.pieces {
                        std::thread::sleep(reply.gap);
                        if stream.write_all(p.as_bytes()).is_err() || stream.flush().is_err() {
                            return;
                        }
                    }
                });
            }
        });
        Self { base, requests }
    }
}
