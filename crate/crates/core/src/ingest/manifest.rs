use std::collections::HashSet;

use serde_json::{Map, Value};
use thiserror::Error;

use crate::metadata::{MetaValue, Metadata};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    /// Path as written in the manifest, relative to the manifest location.
    pub path: String,
    pub metadata: Metadata,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ManifestError {
    #[error("malformed manifest line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("metadata key {key:?} of document {id:?} is not a scalar")]
    NonScalarMetadata { id: String, key: String },
}

impl ManifestError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::MalformedLine { .. } => "MalformedLine",
            Self::DuplicateId(_) => "DuplicateId",
            Self::NonScalarMetadata { .. } => "NonScalarMetadata",
        }
    }
}

/// Parses a JSONL manifest. Blank lines are skipped; line numbers are 1-based.
pub fn parse_manifest(bytes: &[u8]) -> Result<Manifest, ManifestError> {
    let bytes = bytes.strip_prefix(&[0xEF, 0xBB, 0xBF]).unwrap_or(bytes);
    let mut seen = HashSet::new();
    let mut entries = Vec::new();

    for (idx, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = idx + 1;
        let malformed = |reason: &str| ManifestError::MalformedLine {
            line,
            reason: reason.to_owned(),
        };
        let text = std::str::from_utf8(raw).map_err(|_| malformed("not valid UTF-8"))?;
        let text = text.trim();
        if text.is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(text).map_err(|e| malformed(&e.to_string()))?;
        let Value::Object(mut obj) = value else {
            return Err(malformed("expected a JSON object"));
        };
        let id = take_string(&mut obj, "id").ok_or_else(|| malformed("missing string key \"id\""))?;
        let path =
            take_string(&mut obj, "path").ok_or_else(|| malformed("missing string key \"path\""))?;
        if id.is_empty() {
            return Err(malformed("\"id\" must be nonempty"));
        }

        let mut metadata = Metadata::new();
        for (key, v) in obj {
            if key.is_empty() {
                return Err(malformed("metadata keys must be nonempty"));
            }
            let scalar = MetaValue::from_json(&v).ok_or_else(|| ManifestError::NonScalarMetadata {
                id: id.clone(),
                key: key.clone(),
            })?;
            metadata.insert(key, scalar);
        }

        if !seen.insert(id.clone()) {
            return Err(ManifestError::DuplicateId(id));
        }
        entries.push(ManifestEntry { id, path, metadata });
    }
    Ok(Manifest { entries })
}

fn take_string(obj: &mut Map<String, Value>, key: &str) -> Option<String> {
    match obj.remove(key)? {
        Value::String(s) => Some(s),
        _ => None,
    }
}

impl Manifest {
    /// Serializes back to JSONL, one entry per line, metadata flattened.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let mut obj = Map::new();
            obj.insert("id".into(), Value::String(e.id.clone()));
            obj.insert("path".into(), Value::String(e.path.clone()));
            for (k, v) in &e.metadata {
                obj.insert(k.clone(), serde_json::to_value(v).expect("scalar serializes"));
            }
            out.push_str(&Value::Object(obj).to_string());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_entry() {
        let m = parse_manifest(br#"{"id":"d1","path":"a.txt","year":2020}"#).unwrap();
        assert_eq!(m.entries.len(), 1);
        assert_eq!(m.entries[0].id, "d1");
        assert_eq!(m.entries[0].path, "a.txt");
        assert_eq!(m.entries[0].metadata.len(), 1);
        assert_eq!(m.entries[0].metadata["year"], MetaValue::Int(2020));
    }

    #[test]
    fn empty_input() {
        assert_eq!(parse_manifest(b"").unwrap().entries.len(), 0);
        assert_eq!(parse_manifest(b"\n\n").unwrap().entries.len(), 0);
    }

    #[test]
    fn duplicate_id() {
        let input = b"{\"id\":\"d1\",\"path\":\"a.txt\"}\n{\"id\":\"d1\",\"path\":\"b.txt\"}\n";
        assert_eq!(
            parse_manifest(input),
            Err(ManifestError::DuplicateId("d1".into()))
        );
    }

    #[test]
    fn malformed_and_non_scalar() {
        let input = b"{\"id\":\"d1\",\"path\":\"a.txt\"}\n{not json\n";
        assert!(matches!(
            parse_manifest(input),
            Err(ManifestError::MalformedLine { line: 2, .. })
        ));
        assert!(matches!(
            parse_manifest(br#"{"path":"a.txt"}"#),
            Err(ManifestError::MalformedLine { line: 1, .. })
        ));
        assert_eq!(
            parse_manifest(br#"{"id":"d1","path":"a.txt","tags":["x"]}"#),
            Err(ManifestError::NonScalarMetadata {
                id: "d1".into(),
                key: "tags".into()
            })
        );
    }

    fn scalar() -> impl Strategy<Value = MetaValue> {
        prop_oneof![
            any::<bool>().prop_map(MetaValue::Bool),
            any::<i64>().prop_map(MetaValue::Int),
            (-1e9f64..1e9).prop_map(MetaValue::Float),
            "[a-zA-Z0-9 \"\\\\é]{0,12}".prop_map(MetaValue::Str),
        ]
    }

    fn entries() -> impl Strategy<Value = Vec<ManifestEntry>> {
        prop::collection::vec(
            (
                "[a-z0-9/._ -]{1,16}",
                prop::collection::btree_map("[a-zA-Z_]{1,8}", scalar(), 0..4),
            ),
            0..8,
        )
        .prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (path, metadata))| ManifestEntry {
                    id: format!("doc-{i}"),
                    path,
                    metadata: metadata
                        .into_iter()
                        .filter(|(k, _)| k != "id" && k != "path")
                        .collect(),
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn jsonl_round_trip(entries in entries()) {
            let manifest = Manifest { entries };
            let reparsed = parse_manifest(manifest.to_jsonl().as_bytes()).unwrap();
            prop_assert_eq!(reparsed, manifest);
        }
    }
}
