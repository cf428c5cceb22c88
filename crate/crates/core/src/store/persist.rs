//! Store directory format.
//!
//! ```text
//! meta.json      {format_version, dim, embedder_id, chunk_size, overlap, count, ann_seed}
//! vectors.bin    "VRAG" | u32 version | u32 dim | u64 count | count*dim f32, all little-endian
//! chunks.jsonl   one record per line, in record_id order
//! ann.idx        optional HNSW graph; absent means no index was built
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::hnsw::{HnswIndex, IndexDecodeError};
use super::{Store, StoreConfig, StoreError};
use crate::chunker::{Chunk, ChunkParams};
use crate::embed::EmbedderSpec;
use crate::metadata::Metadata;

pub const META_FILE: &str = "meta.json";
pub const VECTORS_FILE: &str = "vectors.bin";
pub const CHUNKS_FILE: &str = "chunks.jsonl";
pub const ANN_FILE: &str = "ann.idx";

const FORMAT_VERSION: u32 = 1;
const VECTORS_MAGIC: &[u8; 4] = b"VRAG";
const VECTORS_HEADER_LEN: usize = 20;

#[derive(Debug, Serialize, Deserialize)]
struct MetaFile {
    format_version: u32,
    dim: usize,
    embedder_id: String,
    chunk_size: usize,
    overlap: usize,
    count: usize,
    ann_seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ChunkLine {
    record_id: u64,
    doc_id: String,
    chunk_index: usize,
    token_start: usize,
    token_end: usize,
    text: String,
    metadata: Metadata,
}

fn corrupt(file: &str, offset: u64, reason: impl Into<String>) -> StoreError {
    StoreError::CorruptStore {
        file: file.to_owned(),
        offset,
        reason: reason.into(),
    }
}

/// Writes `bytes` next to `path` and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

pub fn encode_vectors(dim: usize, count: usize, data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(VECTORS_HEADER_LEN + data.len() * 4);
    out.extend_from_slice(VECTORS_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

impl Store {
    /// Writes the store into `dir`, creating it if needed. An index that
    /// does not cover every record is not written, and a stale `ann.idx`
    /// from an earlier save is removed.
    pub fn save(&self, dir: &Path) -> Result<(), StoreError> {
        fs::create_dir_all(dir)?;
        let meta = MetaFile {
            format_version: FORMAT_VERSION,
            dim: self.dim(),
            embedder_id: self.config.embedder.id.clone(),
            chunk_size: self.config.chunk_params.chunk_size(),
            overlap: self.config.chunk_params.overlap(),
            count: self.len(),
            ann_seed: self.config.ann_seed,
        };
        let mut meta_json = serde_json::to_vec_pretty(&meta).expect("meta serializes");
        meta_json.push(b'\n');

        let mut chunks = Vec::new();
        for rec in self.records() {
            let line = ChunkLine {
                record_id: rec.record_id,
                doc_id: rec.chunk.doc_id.clone(),
                chunk_index: rec.chunk.index,
                token_start: rec.chunk.token_start,
                token_end: rec.chunk.token_end,
                text: rec.chunk.text.clone(),
                metadata: rec.chunk.metadata.clone(),
            };
            serde_json::to_writer(&mut chunks, &line).expect("chunk serializes");
            chunks.push(b'\n');
        }

        write_atomic(
            &dir.join(VECTORS_FILE),
            &encode_vectors(self.dim(), self.len(), &self.vectors),
        )?;
        write_atomic(&dir.join(CHUNKS_FILE), &chunks)?;
        let ann_path = dir.join(ANN_FILE);
        match self.index.as_ref().filter(|_| self.ann_ready()) {
            Some(ix) => write_atomic(&ann_path, &ix.to_bytes())?,
            None => match fs::remove_file(&ann_path) {
                Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(e.into()),
                _ => {}
            },
        }
        // meta last: a directory with a readable meta.json is complete
        write_atomic(&dir.join(META_FILE), &meta_json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, StoreError> {
        let meta_bytes = fs::read(dir.join(META_FILE))?;
        let meta = parse_meta(&meta_bytes)?;
        let chunk_params = ChunkParams::new(meta.chunk_size, meta.overlap)
            .map_err(|e| corrupt(META_FILE, 0, e.to_string()))?;
        if meta.dim == 0 {
            return Err(corrupt(META_FILE, 0, "dim must be positive"));
        }

        let vectors = decode_vectors(&fs::read(dir.join(VECTORS_FILE))?, meta.dim, meta.count)?;
        let chunks = decode_chunks(&fs::read(dir.join(CHUNKS_FILE))?, meta.count)?;

        let index = match fs::read(dir.join(ANN_FILE)) {
            Ok(bytes) => {
                let ix = HnswIndex::from_bytes(&bytes).map_err(|e| match e {
                    IndexDecodeError::At { offset, reason } => corrupt(ANN_FILE, offset, reason),
                    IndexDecodeError::Version(found) => StoreError::IncompatibleVersion {
                        file: ANN_FILE.into(),
                        found,
                    },
                })?;
                if ix.len() != meta.count {
                    return Err(corrupt(ANN_FILE, 0, "index size does not match record count"));
                }
                Some(ix)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };

        let config = StoreConfig {
            embedder: EmbedderSpec::new(meta.embedder_id, meta.dim),
            chunk_params,
            ann_seed: meta.ann_seed,
        };
        Ok(Store::from_parts(config, chunks, vectors, index))
    }
}

fn parse_meta(bytes: &[u8]) -> Result<MetaFile, StoreError> {
    let value: serde_json::Value = serde_json::from_slice(bytes)
        .map_err(|e| corrupt(META_FILE, 0, format!("invalid JSON: {e}")))?;
    let version = value.get("format_version").and_then(|v| v.as_u64());
    match version {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(found) => {
            return Err(StoreError::IncompatibleVersion {
                file: META_FILE.into(),
                found,
            })
        }
        None => return Err(corrupt(META_FILE, 0, "missing format_version")),
    }
    serde_json::from_value(value).map_err(|e| corrupt(META_FILE, 0, e.to_string()))
}

fn decode_vectors(bytes: &[u8], dim: usize, count: usize) -> Result<Vec<f32>, StoreError> {
    if bytes.len() < VECTORS_HEADER_LEN {
        return Err(corrupt(
            VECTORS_FILE,
            bytes.len() as u64,
            "truncated header",
        ));
    }
    if &bytes[..4] != VECTORS_MAGIC {
        return Err(corrupt(VECTORS_FILE, 0, "bad magic"));
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return Err(StoreError::IncompatibleVersion {
            file: VECTORS_FILE.into(),
            found: version as u64,
        });
    }
    if u32_at(8) as usize != dim {
        return Err(corrupt(VECTORS_FILE, 8, "dimension disagrees with meta.json"));
    }
    let file_count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    if file_count != count as u64 {
        return Err(corrupt(VECTORS_FILE, 12, "count disagrees with meta.json"));
    }

    let expected = VECTORS_HEADER_LEN + count * dim * 4;
    if bytes.len() < expected {
        return Err(corrupt(VECTORS_FILE, bytes.len() as u64, "truncated vector data"));
    }
    if bytes.len() > expected {
        return Err(corrupt(VECTORS_FILE, expected as u64, "trailing bytes"));
    }
    Ok(bytes[VECTORS_HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect())
}

fn decode_chunks(bytes: &[u8], count: usize) -> Result<Vec<Chunk>, StoreError> {
    let mut chunks = Vec::with_capacity(count);
    let mut offset = 0usize;
    for line in bytes.split_inclusive(|&b| b == b'\n') {
        let start = offset;
        offset += line.len();
        let trimmed = line.strip_suffix(b"\n").unwrap_or(line);
        if trimmed.is_empty() {
            continue;
        }
        let parsed: ChunkLine = serde_json::from_slice(trimmed)
            .map_err(|e| corrupt(CHUNKS_FILE, start as u64, e.to_string()))?;
        if parsed.record_id != chunks.len() as u64 {
            return Err(corrupt(
                CHUNKS_FILE,
                start as u64,
                format!("expected record_id {}, found {}", chunks.len(), parsed.record_id),
            ));
        }
        chunks.push(Chunk {
            doc_id: parsed.doc_id,
            index: parsed.chunk_index,
            token_start: parsed.token_start,
            token_end: parsed.token_end,
            text: parsed.text,
            metadata: parsed.metadata,
        });
    }
    if chunks.len() != count {
        return Err(corrupt(
            CHUNKS_FILE,
            bytes.len() as u64,
            format!("{} records, meta.json says {count}", chunks.len()),
        ));
    }
    Ok(chunks)
}
