//! Line-delimited benchmark manifests.
//!
//! Each line is one JSON document:
//!
//! ```json
//! {"sample_id": "hi-001", "images": ["pages/hi-001.png"], "language": "hi",
//!  "task": "transcribe", "ground_truth": "..."}
//! ```
//!
//! `task` is one of `transcribe`, `extract`, `freeform_match`. Extraction and
//! free-form entries carry a field map as `ground_truth`; extraction entries
//! also need `doc_type`. An optional `format_version` must equal
//! [`MANIFEST_FORMAT_VERSION`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::schemas::{DocType, FieldRecord};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate sample_id {sample_id:?} on lines {first} and {second}")]
    DuplicateSample {
        sample_id: String,
        first: usize,
        second: usize,
    },
    #[error("{path}: no valid entries ({rejected} rejected)")]
    Empty { path: String, rejected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Transcribe,
    Extract,
    FreeformMatch,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Transcribe => "transcribe",
            Task::Extract => "extract",
            Task::FreeformMatch => "freeform_match",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroundTruth {
    Text(String),
    Fields(IndexMap<String, String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub images: Vec<PathBuf>,
    pub language: String,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_type: Option<DocType>,
    pub ground_truth: GroundTruth,
}

impl ManifestEntry {
    pub fn text_truth(&self) -> Option<&str> {
        match &self.ground_truth {
            GroundTruth::Text(s) => Some(s),
            GroundTruth::Fields(_) => None,
        }
    }

    /// Ground-truth fields as a record, with the page count taken from the image list.
    pub fn field_truth(&self) -> Option<FieldRecord> {
        match &self.ground_truth {
            GroundTruth::Fields(map) => Some(FieldRecord {
                doc_type: self.doc_type,
                values: map.clone(),
                pages: self.images.len().max(1) as u32,
            }),
            GroundTruth::Text(_) => None,
        }
    }

    fn check(&self) -> Result<(), String> {
        if self.sample_id.trim().is_empty() {
            return Err("empty sample_id".into());
        }
        if self.images.is_empty() {
            return Err("no images".into());
        }
        match (self.task, &self.ground_truth) {
            (Task::Transcribe, GroundTruth::Text(_)) => Ok(()),
            (Task::Transcribe, _) => Err("transcribe task needs a string ground_truth".into()),
            (Task::Extract, GroundTruth::Fields(_)) if self.doc_type.is_none() => {
                Err("extract task needs a doc_type".into())
            }
            (Task::Extract | Task::FreeformMatch, GroundTruth::Fields(f)) if f.is_empty() => {
                Err(format!("{} task needs at least one ground-truth field", self.task))
            }
            (Task::Extract | Task::FreeformMatch, GroundTruth::Fields(_)) => Ok(()),
            (task, _) => Err(format!("{task} task needs a field-map ground_truth")),
        }
    }
}

#[derive(Debug, Deserialize)]
struct EntryLine {
    #[serde(default)]
    format_version: Option<u32>,
    #[serde(flatten)]
    entry: ManifestEntry,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub root: PathBuf,
}

impl Manifest {
    pub fn get(&self, sample_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.sample_id == sample_id)
    }

    pub fn resolve(&self, image: &Path) -> PathBuf {
        if image.is_absolute() {
            image.to_path_buf()
        } else {
            self.root.join(image)
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingImage {
    pub sample_id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadReport {
    pub manifest: Manifest,
    pub rejected: Vec<RejectedLine>,
    pub missing_images: Vec<MissingImage>,
}

/// Parse manifest text. Bad lines are rejected individually; a duplicate
/// sample id fails the whole load.
pub fn parse_manifest(text: &str, root: &Path, source: &str) -> Result<LoadReport, DatasetError> {
    let mut entries = Vec::new();
    let mut rejected = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: EntryLine = match serde_json::from_str(line) {
            Ok(p) => p,
            Err(e) => {
                rejected.push(RejectedLine {
                    line: line_no,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        if let Some(v) = parsed.format_version.filter(|&v| v != MANIFEST_FORMAT_VERSION) {
            rejected.push(RejectedLine {
                line: line_no,
                reason: format!("unsupported format_version {v}"),
            });
            continue;
        }
        let entry = parsed.entry;
        if let Err(reason) = entry.check() {
            rejected.push(RejectedLine { line: line_no, reason });
            continue;
        }
        if let Some(&first) = seen.get(&entry.sample_id) {
            return Err(DatasetError::DuplicateSample {
                sample_id: entry.sample_id,
                first,
                second: line_no,
            });
        }
        seen.insert(entry.sample_id.clone(), line_no);
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(DatasetError::Empty {
            path: source.to_string(),
            rejected: rejected.len(),
        });
    }
    let manifest = Manifest {
        entries,
        root: root.to_path_buf(),
    };
    let missing_images = manifest
        .entries
        .iter()
        .flat_map(|e| {
            e.images.iter().filter_map(|img| {
                let p = manifest.resolve(img);
                (!p.exists()).then(|| MissingImage {
                    sample_id: e.sample_id.clone(),
                    path: p,
                })
            })
        })
        .collect();
    Ok(LoadReport {
        manifest,
        rejected,
        missing_images,
    })
}

/// Load a manifest file. Relative image paths resolve against the file's directory.
pub fn load_manifest(path: &Path) -> Result<LoadReport, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, &root, &path.display().to_string())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ManifestStats {
    pub by_language: BTreeMap<String, usize>,
    /// Entries without a doc type are counted under `"none"`.
    pub by_doc_type: BTreeMap<String, usize>,
    pub by_task: BTreeMap<String, usize>,
    pub total: usize,
}

pub fn stats(m: &Manifest) -> ManifestStats {
    let mut s = ManifestStats::default();
    for e in &m.entries {
        *s.by_language.entry(e.language.clone()).or_default() += 1;
        let d = e.doc_type.map_or("none".to_string(), |d| d.to_string());
        *s.by_doc_type.entry(d).or_default() += 1;
        *s.by_task.entry(e.task.to_string()).or_default() += 1;
        s.total += 1;
    }
    s
}
