//! Synthetic corpora with planted sentinel tokens.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::embed::bucket;
use crate::ingest::Document;
use crate::metadata::{MetaValue, Metadata};

const VOCAB_SIZE: usize = 400;
const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
const SENTINEL_PREFIX: &str = "zq";
const MAX_SENTINEL_ATTEMPTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeedleCorpusParams {
    pub n_docs: usize,
    pub doc_tokens: usize,
    pub n_needles: usize,
    pub seed: u64,
    /// Dimension of the reference embedder the corpus will be searched
    /// with. Sentinels are drawn so their bucket is not shared with any
    /// filler word or other sentinel at this dimension.
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Needle {
    pub needle_id: usize,
    pub sentinel: String,
    pub host_doc_id: String,
    pub token_position: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeedleCorpus {
    pub documents: Vec<Document>,
    pub needles: Vec<Needle>,
}

/// Filler vocabulary: consonant-vowel pseudo-words. None contains a `q`, so
/// no filler word can look like a sentinel.
pub fn filler_vocabulary() -> Vec<String> {
    let syllables: Vec<String> = ONSETS
        .iter()
        .flat_map(|o| VOWELS.iter().map(move |v| format!("{o}{v}")))
        .collect();
    let n = syllables.len();
    (0..VOCAB_SIZE)
        .map(|i| {
            let (a, b) = (&syllables[i % n], &syllables[i / n]);
            format!("{a}{b}")
        })
        .collect()
}

pub fn build_needle_corpus(params: &NeedleCorpusParams) -> Result<NeedleCorpus, EvalError> {
    if params.n_needles > params.n_docs {
        return Err(EvalError::InvalidCounts(format!(
            "{} needles for {} documents",
            params.n_needles, params.n_docs
        )));
    }
    if params.n_needles > 0 && params.doc_tokens == 0 {
        return Err(EvalError::InvalidCounts(
            "needles need documents with at least one token".into(),
        ));
    }
    if params.dim == 0 {
        return Err(EvalError::InvalidCounts("dim must be positive".into()));
    }

    let vocab = filler_vocabulary();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut docs: Vec<Vec<String>> = (0..params.n_docs)
        .map(|_| {
            (0..params.doc_tokens)
                .map(|_| vocab[rng.random_range(0..vocab.len())].clone())
                .collect()
        })
        .collect();

    let mut taken: HashSet<usize> = vocab.iter().map(|w| bucket(w, params.dim)).collect();
    let mut hosts: Vec<usize> = (0..params.n_docs).collect();
    hosts.shuffle(&mut rng);
    hosts.truncate(params.n_needles);

    let mut needles = Vec::with_capacity(params.n_needles);
    for (needle_id, &host) in hosts.iter().enumerate() {
        let sentinel = draw_sentinel(&mut rng, params.dim, &mut taken)?;
        let token_position = rng.random_range(0..params.doc_tokens);
        docs[host][token_position] = sentinel.clone();
        needles.push(Needle {
            needle_id,
            sentinel,
            host_doc_id: doc_id(host),
            token_position,
        });
    }

    let documents = docs
        .into_iter()
        .enumerate()
        .map(|(i, tokens)| {
            let mut metadata = Metadata::new();
            metadata.insert("year".into(), MetaValue::Int(2015 + (i % 10) as i64));
            metadata.insert("synthetic".into(), MetaValue::Bool(true));
            Document {
                id: doc_id(i),
                text: tokens.join(" "),
                metadata,
                source_path: format!("{}.txt", doc_id(i)),
            }
        })
        .collect();
    Ok(NeedleCorpus { documents, needles })
}

fn doc_id(i: usize) -> String {
    format!("doc-{i:04}")
}

fn draw_sentinel(
    rng: &mut ChaCha8Rng,
    dim: usize,
    taken: &mut HashSet<usize>,
) -> Result<String, EvalError> {
    for _ in 0..MAX_SENTINEL_ATTEMPTS {
        let candidate = format!("{SENTINEL_PREFIX}{:012x}", rng.random::<u64>() >> 16);
        if taken.insert(bucket(&candidate, dim)) {
            return Ok(candidate);
        }
    }
    Err(EvalError::InvalidCounts(format!(
        "no free embedding bucket left for another sentinel at dim {dim}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n_needles: usize) -> NeedleCorpusParams {
        NeedleCorpusParams {
            n_docs: 20,
            doc_tokens: 50,
            n_needles,
            seed: 11,
            dim: 1024,
        }
    }

    #[test]
    fn vocabulary_is_distinct_and_sentinel_free() {
        let v = filler_vocabulary();
        assert_eq!(v.iter().collect::<HashSet<_>>().len(), VOCAB_SIZE);
        assert!(v.iter().all(|w| !w.contains('q')));
    }

    #[test]
    fn seed_stable() {
        assert_eq!(
            build_needle_corpus(&params(5)).unwrap(),
            build_needle_corpus(&params(5)).unwrap()
        );
        let mut other = params(5);
        other.seed = 12;
        assert_ne!(
            build_needle_corpus(&params(5)).unwrap(),
            build_needle_corpus(&other).unwrap()
        );
    }

    #[test]
    fn no_needles() {
        let c = build_needle_corpus(&params(0)).unwrap();
        assert!(c.needles.is_empty());
        assert_eq!(c.documents.len(), 20);
    }

    #[test]
    fn sentinels_occur_once() {
        let c = build_needle_corpus(&params(20)).unwrap();
        for n in &c.needles {
            let occurrences: usize = c
                .documents
                .iter()
                .map(|d| d.text.split_whitespace().filter(|t| *t == n.sentinel).count())
                .sum();
            assert_eq!(occurrences, 1, "{}", n.sentinel);
            let host = c.documents.iter().find(|d| d.id == n.host_doc_id).unwrap();
            assert_eq!(
                host.text.split_whitespace().nth(n.token_position),
                Some(n.sentinel.as_str())
            );
        }
    }

    #[test]
    fn invalid_counts() {
        let mut p = params(21);
        assert!(build_needle_corpus(&p).is_err());
        p.n_needles = 3;
        p.dim = 8;
        assert!(matches!(
            build_needle_corpus(&p),
            Err(EvalError::InvalidCounts(_))
        ));
    }
}
