//! Document loading: manifest parsing, format-specific text extraction and
//! whitespace normalization.

mod html;
mod manifest;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metadata::Metadata;

pub use html::html_to_text;
pub use manifest::{parse_manifest, Manifest, ManifestEntry, ManifestError};

/// The ingestion unit: normalized text plus the metadata it was registered with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub metadata: Metadata,
    pub source_path: String,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("file is not valid UTF-8: {0}")]
    InvalidEncoding(PathBuf),
    #[error("unsupported extension {extension:?} for {path} (convert to .txt/.md/.html first)")]
    UnsupportedExtension { path: PathBuf, extension: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IngestError {
    /// Stable machine-readable code, used in API error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Self::FileNotFound(_) => "FileNotFound",
            Self::InvalidEncoding(_) => "InvalidEncoding",
            Self::UnsupportedExtension { .. } => "UnsupportedExtension",
            Self::Io { .. } => "Io",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SourceFormat {
    Plain,
    Html,
}

fn source_format(path: &Path) -> Result<SourceFormat, IngestError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "txt" | "md" => Ok(SourceFormat::Plain),
        "html" | "htm" => Ok(SourceFormat::Html),
        _ => Err(IngestError::UnsupportedExtension {
            path: path.to_path_buf(),
            extension: ext,
        }),
    }
}

/// Loads the file behind a manifest entry. Relative paths resolve against
/// `base_dir`, normally the directory holding the manifest.
pub fn load_document(entry: &ManifestEntry, base_dir: &Path) -> Result<Document, IngestError> {
    let path = base_dir.join(&entry.path);
    let format = source_format(&path)?;
    let bytes = std::fs::read(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => IngestError::FileNotFound(path.clone()),
        _ => IngestError::Io {
            path: path.clone(),
            source: e,
        },
    })?;
    let raw = decode_utf8(bytes).ok_or_else(|| IngestError::InvalidEncoding(path.clone()))?;
    Ok(document_from_text(entry, &raw, format == SourceFormat::Html))
}

/// Builds a document from already-read content. `is_html` selects tag stripping.
pub fn document_from_text(entry: &ManifestEntry, raw: &str, is_html: bool) -> Document {
    let text = if is_html {
        normalize_text(&html_to_text(raw))
    } else {
        normalize_text(raw)
    };
    Document {
        id: entry.id.clone(),
        text,
        metadata: entry.metadata.clone(),
        source_path: entry.path.clone(),
    }
}

fn decode_utf8(mut bytes: Vec<u8>) -> Option<String> {
    if bytes.starts_with(&[0xEF, 0xBB, 0xBF]) {
        bytes.drain(..3);
    }
    String::from_utf8(bytes).ok()
}

/// Collapses whitespace: CR dropped, every other non-newline whitespace run
/// becomes one space, blank lines vanish so paragraph breaks end up as a
/// single `\n`, and the result is trimmed.
pub fn normalize_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for line in raw.split('\n') {
        let mut words = line.split_whitespace().peekable();
        if words.peek().is_none() {
            continue;
        }
        if !out.is_empty() {
            out.push('\n');
        }
        for (i, w) in words.enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(w);
        }
    }
    out
}

/// Outcome of ingesting a whole manifest: loaded documents plus per-entry failures.
#[derive(Debug, Default)]
pub struct IngestReport {
    pub documents: Vec<Document>,
    pub errors: Vec<(String, IngestError)>,
}

pub fn ingest_manifest(manifest: &Manifest, base_dir: &Path) -> IngestReport {
    let mut report = IngestReport::default();
    for entry in &manifest.entries {
        match load_document(entry, base_dir) {
            Ok(doc) => report.documents.push(doc),
            Err(e) => report.errors.push((entry.id.clone(), e)),
        }
    }
    report
}
