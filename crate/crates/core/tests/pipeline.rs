mod common;

use proptest::prelude::*;
use rag_core::engine::parse_source_sections;
use rag_core::eval::{build_needle_corpus, vectorize_corpus, NeedleCorpusParams};
use rag_core::store::{Clause, CmpOp};
use rag_core::{
    answer_query, assemble_prompt, chunk_document, generate, retrieve, tokenize, ChunkParams,
    Document, Embedder, ExtractiveStub, FilterPredicate, MetaValue, Metadata, PromptBudget,
    ReferenceEmbedder, RetrievalParams, Store, StoreConfig,
};

fn doc(id: &str, text: &str, year: i64) -> Document {
    let mut metadata = Metadata::new();
    metadata.insert("year".into(), MetaValue::Int(year));
    Document {
        id: id.into(),
        text: text.into(),
        metadata,
        source_path: format!("{id}.txt"),
    }
}

fn corpus_store(docs: &[Document], params: ChunkParams, emb: &ReferenceEmbedder) -> Store {
    let mut store = Store::create(StoreConfig::new(emb.spec().clone(), params)).unwrap();
    let chunks: Vec<_> = docs.iter().flat_map(|d| chunk_document(d, params)).collect();
    let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
    let vectors = emb.embed_batch(&texts).unwrap();
    store.insert(chunks, vectors).unwrap();
    store
}

fn trade_docs() -> Vec<Document> {
    vec![
        doc("tariffs", "tariff schedules for maritime freight rose sharply in the second quarter", 2020),
        doc("shipping", "container shipping rates and port congestion eased after the crisis", 2021),
        doc("debt", "sovereign debt service burdens weigh on developing economies", 2020),
        doc("food", "wheat and fertilizer prices spiked as export restrictions spread", 2022),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn chunk_windows_cover_overlap_and_reconstruct(
        n in 0usize..120,
        size in 1usize..40,
        overlap_frac in 0.0f64..1.0,
    ) {
        let overlap = ((size as f64) * overlap_frac) as usize;
        let overlap = overlap.min(size - 1);
        let params = ChunkParams::new(size, overlap).unwrap();
        let text: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        let d = doc("d", &text.join(" "), 2000);
        let chunks = chunk_document(&d, params);

        if n == 0 {
            prop_assert!(chunks.is_empty());
            return Ok(());
        }
        prop_assert_eq!(chunks[0].token_start, 0);
        prop_assert_eq!(chunks.last().unwrap().token_end, n);
        for w in chunks.windows(2) {
            prop_assert_eq!(w[0].token_end - w[1].token_start, overlap);
        }
        let mut rebuilt: Vec<String> = Vec::new();
        for (i, c) in chunks.iter().enumerate() {
            prop_assert!(c.token_start < c.token_end);
            prop_assert!(c.token_end - c.token_start <= size);
            prop_assert_eq!(c.index, i);
            prop_assert_eq!(c.metadata.get("year"), Some(&MetaValue::Int(2000)));
            let toks = tokenize(&c.text);
            let skip = if i == 0 { 0 } else { overlap };
            rebuilt.extend(toks[skip..].iter().map(|t| t.to_string()));
        }
        prop_assert_eq!(rebuilt, text);
    }
}

#[test]
fn identity_query_is_rank_one() {
    let emb = ReferenceEmbedder::new(256);
    let store = corpus_store(&trade_docs(), ChunkParams::new(64, 8).unwrap(), &emb);
    let text = &store.record(2).unwrap().chunk.text.clone();
    let hits = retrieve(&store, text, &RetrievalParams::default(), &emb).unwrap();
    assert_eq!(hits[0].record_id, 2);
    assert!((hits[0].score - 1.0).abs() < 1e-6);

    let none = retrieve(
        &store,
        text,
        &RetrievalParams {
            min_score: 1.1,
            ..Default::default()
        },
        &emb,
    )
    .unwrap();
    assert!(none.is_empty());
}

#[test]
fn retrieve_matches_filtered_oracle() {
    let emb = ReferenceEmbedder::new(128);
    let store = corpus_store(&trade_docs(), ChunkParams::new(4, 1).unwrap(), &emb);
    let filter = FilterPredicate::new(vec![Clause::new("year", CmpOp::Eq, 2020i64)]).unwrap();
    let params = RetrievalParams {
        top_n: 3,
        min_score: f64::NEG_INFINITY,
        filter: Some(filter.clone()),
        ..Default::default()
    };
    let query = "freight debt tariff";
    let hits = retrieve(&store, query, &params, &emb).unwrap();
    let q = emb.embed_text(query).unwrap();
    let oracle = common::brute_force(&store, q.as_slice(), 3, |m| filter.matches(m));
    assert_eq!(
        hits.iter().map(|h| h.record_id).collect::<Vec<_>>(),
        oracle.iter().map(|o| o.0).collect::<Vec<_>>()
    );
}

#[test]
fn embedder_mismatch_rejected() {
    let emb = ReferenceEmbedder::new(64);
    let store = corpus_store(&trade_docs(), ChunkParams::default(), &emb);
    let other = ReferenceEmbedder::new(32);
    assert_eq!(
        retrieve(&store, "x", &RetrievalParams::default(), &other)
            .unwrap_err()
            .code(),
        "EmbedderMismatch"
    );
}

#[test]
fn end_to_end_answers_cite_their_sources() {
    let emb = ReferenceEmbedder::new(256);
    let store = corpus_store(&trade_docs(), ChunkParams::new(6, 2).unwrap(), &emb);
    let stub = ExtractiveStub::new();
    let params = RetrievalParams {
        top_n: 3,
        ..Default::default()
    };
    let budget = PromptBudget::default();
    let answer = answer_query(&store, "shipping rates", &params, &budget, &emb, &stub).unwrap();

    let hits = retrieve(&store, "shipping rates", &params, &emb).unwrap();
    let bundle = assemble_prompt(&hits, "shipping rates", &budget).unwrap();
    assert_eq!(answer.sources, bundle.included_hits);
    assert_eq!(answer.text, generate(&bundle, &stub, &mut |_| {}).unwrap().text);
    assert!(answer.text.contains(&format!("[{}]", answer.sources[0].chunk.label())));

    let sections = parse_source_sections(&bundle.render());
    assert_eq!(sections.len(), bundle.included_hits.len());
    for ((label, text), hit) in sections.iter().zip(&bundle.included_hits) {
        assert_eq!(label, &hit.chunk.label());
        assert_eq!(text, &hit.chunk.text);
    }
}

#[test]
fn empty_store_answers_with_no_sources() {
    let emb = ReferenceEmbedder::new(64);
    let store = corpus_store(&[], ChunkParams::default(), &emb);
    let answer = answer_query(
        &store,
        "anything",
        &RetrievalParams::default(),
        &PromptBudget::default(),
        &emb,
        &ExtractiveStub::new(),
    )
    .unwrap();
    assert!(answer.sources.is_empty());
    assert_eq!(answer.text, "Based on 0 retrieved passage(s):");
}

#[test]
fn sentinel_chunks_rank_first_by_brute_force() {
    let params = NeedleCorpusParams {
        n_docs: 100,
        doc_tokens: 500,
        n_needles: 100,
        seed: 2024,
        dim: 1024,
    };
    let corpus = build_needle_corpus(&params).unwrap();
    let emb = ReferenceEmbedder::new(1024);
    let store = vectorize_corpus(&corpus, ChunkParams::new(256, 32).unwrap(), &emb).unwrap();
    for n in &corpus.needles {
        let q = emb.embed_text(&n.sentinel).unwrap();
        let ranked = common::brute_force(&store, q.as_slice(), store.len(), |_| true);
        let top = store.record(ranked[0].0).unwrap();
        assert!(
            top.chunk.text.split_whitespace().any(|t| t == n.sentinel),
            "needle {} not at rank 1",
            n.needle_id
        );
        assert!(ranked[0].1 > 0.0);
    }
}
