// SPDX-License-Identifier: Apache-2.0

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Estimation,
    Query,
    Holdout,
}

impl Role {
    fn parse(s: &str) -> Result<Role> {
        match s {
            "estimation" => Ok(Role::Estimation),
            "query" => Ok(Role::Query),
            "holdout" => Ok(Role::Holdout),
            other => Err(Error::Manifest(format!("unknown role {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// A set of images with their roles. Relative paths are resolved against
/// `base_dir` (the manifest's own directory when loaded from disk).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub source_note: String,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Deserialize)]
struct RawEntry {
    path: String,
    role: String,
    #[serde(default)]
    label: Option<String>,
}

#[derive(Deserialize)]
struct RawManifest {
    #[serde(default)]
    source_note: String,
    entries: Vec<RawEntry>,
}

impl DatasetManifest {
    pub fn new(source_note: impl Into<String>, entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = DatasetManifest {
            source_note: source_note.into(),
            entries,
            base_dir: PathBuf::new(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Manifest("manifest has no entries".into()));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(&e.path) {
                return Err(Error::Manifest(format!("duplicate path {}", e.path.display())));
            }
        }
        Ok(())
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.role == role)
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let raw: RawManifest =
        serde_json::from_str(text).map_err(|e| Error::Manifest(format!("malformed JSON: {e}")))?;
    let entries = raw
        .entries
        .into_iter()
        .map(|e| {
            Ok(ManifestEntry {
                path: PathBuf::from(e.path),
                role: Role::parse(&e.role)?,
                label: e.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    DatasetManifest::new(raw.source_note, entries)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m = parse_manifest(&text)?;
    m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(entries: &[(&str, &str)]) -> String {
        let e: Vec<String> = entries
            .iter()
            .map(|(p, r)| format!(r#"{{"path": "{p}", "role": "{r}"}}"#))
            .collect();
        format!(r#"{{"source_note": "test", "entries": [{}]}}"#, e.join(","))
    }

    #[test]
    fn fifty_estimation_entries_in_order() {
        let names: Vec<String> = (0..50).map(|i| format!("img_{i:03}.pgm")).collect();
        let pairs: Vec<(&str, &str)> = names.iter().map(|n| (n.as_str(), "estimation")).collect();
        let m = parse_manifest(&doc(&pairs)).unwrap();
        assert_eq!(m.entries.len(), 50);
        assert!(m.entries.iter().all(|e| e.role == Role::Estimation));
        assert_eq!(m.entries[7].path, PathBuf::from("img_007.pgm"));
    }

    #[test]
    fn duplicate_path_rejected() {
        let err = parse_manifest(&doc(&[("a.pgm", "estimation"), ("a.pgm", "query")])).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn unknown_role_rejected() {
        let err = parse_manifest(&doc(&[("a.pgm", "train")])).unwrap_err();
        assert!(err.to_string().contains("unknown role"));
    }

    #[test]
    fn empty_manifest_rejected() {
        assert!(parse_manifest(&doc(&[])).is_err());
    }

    #[test]
    fn labels_and_json_roundtrip() {
        let text = r#"{"source_note": "n", "entries": [{"path": "x.png", "role": "holdout", "label": "cam1"}]}"#;
        let m = parse_manifest(text).unwrap();
        assert_eq!(m.entries[0].label.as_deref(), Some("cam1"));
        assert_eq!(parse_manifest(&m.to_json()).unwrap(), m);
    }
}
