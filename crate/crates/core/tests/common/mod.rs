//! Shared fixtures and independent oracles for integration tests.
#![allow(dead_code)]

use rag_core::{Chunk, EmbeddingVector, MetaValue, Metadata, Store, StoreConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform direction on the unit sphere (normalized Gaussian-ish via Box-Muller).
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
    m
}

pub fn synthetic_chunk(i: usize, metadata: Metadata) -> Chunk {
    Chunk {
        doc_id: format!("doc{}", i / 4),
        index: i % 4,
        token_start: 0,
        token_end: 1,
        text: format!("synthetic record {i}"),
        metadata,
    }
}

/// Store of `n` random unit vectors with random metadata.
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
        let meta = random_metadata(&mut r);
        chunks.push(synthetic_chunk(i, meta));
        vectors.push(EmbeddingVector::from_unit(random_unit(&mut r, dim)).unwrap());
    }
    store.insert(chunks, vectors).unwrap();
    store
}

/// Brute-force reference: score every accepted record in f64, sort all.
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
            let s: f64 = query.iter().zip(r.vector).map(|(a, b)| *a as f64 * *b as f64).sum();
            (r.record_id, s)
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}
