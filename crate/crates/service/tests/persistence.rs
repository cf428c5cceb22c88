mod common;

use std::collections::HashMap;
use std::sync::{Arc, Barrier};

use rag_service::{CorpusState, JobEvent, Service, ServiceConfig, ServiceError, VectorizeRequest};
use rand::seq::SliceRandom;
use rand::Rng;

fn vectorized_service(dir: &std::path::Path, docs: usize) -> Service {
    let service = Service::open(ServiceConfig::new(dir)).unwrap();
    service.create_corpus("trade").unwrap();
    let src = tempfile::tempdir().unwrap();
    let manifest = common::write_corpus(src.path(), docs);
    service.add_documents("trade", &manifest, src.path(), false).unwrap();
    service
        .vectorize(
            "trade",
            &VectorizeRequest {
                chunk_size: Some(10),
                overlap: Some(2),
                embedder: None,
            },
        )
        .unwrap();
    service
}

#[test]
fn restart_preserves_corpora_and_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let service = vectorized_service(dir.path(), 10);
    service.create_corpus("spare").unwrap();
    let s = service.create_session("trade", Default::default()).unwrap();
    let mut last_job = 0;
    for q in ["freight", "debt"] {
        let job = service.submit_query(&s.session_id, q, Default::default()).unwrap();
        job.wait();
        last_job = job.id;
    }
    let history = service.history(&s.session_id).unwrap();
    let store_meta = service.corpus("trade").unwrap().store.unwrap();
    drop(service);

    let service = Service::open(ServiceConfig::new(dir.path())).unwrap();
    let corpora = service.list_corpora();
    assert_eq!(corpora.len(), 2);
    let trade = service.corpus("trade").unwrap();
    assert_eq!(trade.state, CorpusState::Vectorized);
    assert_eq!(trade.document_count, 10);
    assert_eq!(trade.store.unwrap(), store_meta);
    assert_eq!(service.corpus("spare").unwrap().state, CorpusState::Empty);
    assert_eq!(service.history(&s.session_id).unwrap(), history);

    // Job ids keep increasing across restarts.
    let job = service.submit_query(&s.session_id, "wheat", Default::default()).unwrap();
    assert!(job.id > last_job);
    job.wait();
    assert_eq!(service.history(&s.session_id).unwrap().len(), 3);
}

#[test]
fn adding_documents_requires_revectorizing() {
    let dir = tempfile::tempdir().unwrap();
    let service = vectorized_service(dir.path(), 3);
    let s = service.create_session("trade", Default::default()).unwrap();
    let src = tempfile::tempdir().unwrap();
    std::fs::write(src.path().join("new.txt"), "brand new text").unwrap();
    service
        .add_documents("trade", b"{\"id\":\"new\",\"path\":\"new.txt\"}\n", src.path(), false)
        .unwrap();
    assert_eq!(service.corpus("trade").unwrap().state, CorpusState::Ingested);
    assert!(matches!(
        service.submit_query(&s.session_id, "x", Default::default()),
        Err(ServiceError::CorpusNotReady(_))
    ));
    service.vectorize("trade", &Default::default()).unwrap();
    let job = service.submit_query(&s.session_id, "brand new", Default::default()).unwrap();
    match &job.wait()[..] {
        [.., JobEvent::Sources { hits }, JobEvent::Done { .. }] => assert_eq!(hits[0].chunk.doc_id, "new"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unreadable_store_falls_back_to_ingested() {
    let dir = tempfile::tempdir().unwrap();
    drop(vectorized_service(dir.path(), 3));
    let vectors = dir.path().join("corpora/trade/store/vectors.bin");
    let bytes = std::fs::read(&vectors).unwrap();
    std::fs::write(&vectors, &bytes[..bytes.len() - 3]).unwrap();
    let service = Service::open(ServiceConfig::new(dir.path())).unwrap();
    assert_eq!(service.corpus("trade").unwrap().state, CorpusState::Ingested);
    service.vectorize("trade", &Default::default()).unwrap();
    assert_eq!(service.corpus("trade").unwrap().state, CorpusState::Vectorized);
}

#[test]
fn sessions_are_isolated_under_interleaving() {
    let dir = tempfile::tempdir().unwrap();
    let service = vectorized_service(dir.path(), 6);
    let sessions: Vec<String> = (0..6)
        .map(|_| service.create_session("trade", Default::default()).unwrap().session_id)
        .collect();

    let mut r = common::rng(11);
    let mut plan: Vec<(usize, String)> = (0..60)
        .map(|i| (r.random_range(0..sessions.len()), format!("query {i} freight")))
        .collect();
    plan.shuffle(&mut r);

    let barrier = Arc::new(Barrier::new(4));
    let handles: Vec<_> = plan
        .chunks(15)
        .map(|part| {
            let part = part.to_vec();
            let service = service.clone();
            let sessions = sessions.clone();
            let barrier = Arc::clone(&barrier);
            std::thread::spawn(move || {
                barrier.wait();
                part.into_iter()
                    .map(|(s, q)| {
                        let job = service.submit_query(&sessions[s], &q, Default::default()).unwrap();
                        (s, q, job)
                    })
                    .collect::<Vec<_>>()
            })
        })
        .collect();
    let mut expected: HashMap<usize, Vec<(u64, String)>> = HashMap::new();
    for h in handles {
        for (s, q, job) in h.join().unwrap() {
            job.wait();
            expected.entry(s).or_default().push((job.id, q));
        }
    }
    for (s, id) in sessions.iter().enumerate() {
        let mut want = expected.remove(&s).unwrap_or_default();
        want.sort();
        let got: Vec<(u64, String)> = service
            .history(id)
            .unwrap()
            .into_iter()
            .map(|h| (h.job_id, h.query))
            .collect();
        assert_eq!(got, want, "session {s}");
    }
}

#[test]
fn corpus_and_session_errors() {
    let dir = tempfile::tempdir().unwrap();
    let service = Service::open(ServiceConfig::new(dir.path())).unwrap();
    assert!(matches!(service.create_corpus("a b"), Err(ServiceError::InvalidCorpusName(_))));
    service.create_corpus("c").unwrap();
    assert!(matches!(service.create_corpus("c"), Err(ServiceError::CorpusExists(_))));
    assert!(matches!(
        service.vectorize("c", &Default::default()),
        Err(ServiceError::WrongState { state: CorpusState::Empty, .. })
    ));
    assert!(matches!(
        service.create_session("zzz", Default::default()),
        Err(ServiceError::CorpusNotFound(_))
    ));
    assert!(matches!(service.history("nope"), Err(ServiceError::SessionNotFound(_))));
    assert!(matches!(
        service.submit_query("nope", "x", Default::default()),
        Err(ServiceError::SessionNotFound(_))
    ));
    assert!(matches!(service.job(12345), Err(ServiceError::JobNotFound(12345))));
}
