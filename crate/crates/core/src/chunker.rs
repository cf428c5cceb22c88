//! Fixed-size, overlapping token windows over a document.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Document;
use crate::metadata::{MetaValue, Metadata};

pub const DEFAULT_CHUNK_SIZE: usize = 256;
pub const DEFAULT_OVERLAP: usize = 32;

/// Splits normalized text into maximal runs of non-whitespace.
///
/// This whitespace tokenizer is the reference token counter used for chunk
/// windows and prompt budgets alike.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid chunk parameters: chunk_size={chunk_size}, overlap={overlap} (need chunk_size >= 1 and overlap < chunk_size)")]
pub struct InvalidParams {
    pub chunk_size: usize,
    pub overlap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkParams {
    chunk_size: usize,
    overlap: usize,
}

impl ChunkParams {
    pub fn new(chunk_size: usize, overlap: usize) -> Result<Self, InvalidParams> {
        if chunk_size == 0 || overlap >= chunk_size {
            return Err(InvalidParams {
                chunk_size,
                overlap,
            });
        }
        Ok(Self {
            chunk_size,
            overlap,
        })
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn overlap(&self) -> usize {
        self.overlap
    }

    pub fn stride(&self) -> usize {
        self.chunk_size - self.overlap
    }

    /// Half-open token ranges for a sequence of `n` tokens.
    ///
    /// Starts advance by the stride and emission stops at the first window
    /// that reaches the end, so no window is contained in its predecessor.
    pub fn windows(&self, n: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + self.chunk_size).min(n);
            out.push((start, end));
            if end == n {
                break;
            }
            start += self.stride();
        }
        out
    }
}

impl Default for ChunkParams {
    fn default() -> Self {
        Self {
            chunk_size: DEFAULT_CHUNK_SIZE,
            overlap: DEFAULT_OVERLAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub index: usize,
    pub token_start: usize,
    pub token_end: usize,
    pub text: String,
    /// Document metadata plus `doc_id` and `chunk_index`.
    pub metadata: Metadata,
}

impl Chunk {
    /// `doc#index`, the citation label used in prompts and answers.
    pub fn label(&self) -> String {
        format!("{}#{}", self.doc_id, self.index)
    }
}

pub fn chunk_document(doc: &Document, params: ChunkParams) -> Vec<Chunk> {
    let tokens = tokenize(&doc.text);
    params
        .windows(tokens.len())
        .into_iter()
        .enumerate()
        .map(|(index, (start, end))| {
            let mut metadata = doc.metadata.clone();
            metadata.insert("doc_id".into(), MetaValue::Str(doc.id.clone()));
            metadata.insert("chunk_index".into(), MetaValue::Int(index as i64));
            Chunk {
                doc_id: doc.id.clone(),
                index,
                token_start: start,
                token_end: end,
                text: tokens[start..end].join(" "),
                metadata,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc_with_tokens(n: usize) -> Document {
        Document {
            id: "d".into(),
            text: (0..n).map(|i| format!("t{i}")).collect::<Vec<_>>().join(" "),
            metadata: [("year".to_string(), MetaValue::Int(2021))].into_iter().collect(),
            source_path: "d.txt".into(),
        }
    }

    fn ranges(n: usize, size: usize, overlap: usize) -> Vec<(usize, usize)> {
        chunk_document(&doc_with_tokens(n), ChunkParams::new(size, overlap).unwrap())
            .iter()
            .map(|c| (c.token_start, c.token_end))
            .collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("a b  c"), vec!["a", "b", "c"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("x\ny"), vec!["x", "y"]);
    }

    #[test]
    fn stride_examples() {
        assert_eq!(ranges(10, 4, 0), vec![(0, 4), (4, 8), (8, 10)]);
        assert_eq!(ranges(10, 4, 1), vec![(0, 4), (3, 7), (6, 10)]);
        assert_eq!(ranges(3, 8, 2), vec![(0, 3)]);
        assert_eq!(ranges(0, 8, 2), vec![]);
        assert_eq!(ranges(8, 4, 0), vec![(0, 4), (4, 8)]);
    }

    #[test]
    fn invalid_params() {
        assert!(ChunkParams::new(4, 4).is_err());
        assert!(ChunkParams::new(0, 0).is_err());
        assert!(ChunkParams::new(1, 0).is_ok());
    }

    #[test]
    fn chunk_fields() {
        let chunks = chunk_document(&doc_with_tokens(5), ChunkParams::new(3, 1).unwrap());
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[1].text, "t2 t3 t4");
        assert_eq!(chunks[1].index, 1);
        assert_eq!(chunks[1].metadata["year"], MetaValue::Int(2021));
        assert_eq!(chunks[1].metadata["doc_id"], MetaValue::from("d"));
        assert_eq!(chunks[1].metadata["chunk_index"], MetaValue::Int(1));
        assert_eq!(chunks[1].label(), "d#1");
    }
}
