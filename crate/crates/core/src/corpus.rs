//! Corpus file formats and the on-disk store.
//!
//! A normalized [`CveRecord`](crate::ingest::CveRecord) becomes a two-column
//! `field,value` CSV document ([`to_csv_doc`]); documents concatenate into the
//! merged retrieval corpus ([`merge_corpus`]); detected changes are written as
//! fixed-key conflict JSON files ([`write_conflict_json`]). [`CorpusStore`]
//! lays all of this out under one root directory with sha256-checked
//! manifests.

use std::path::{Path, PathBuf};

use chrono::SecondsFormat;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::{ConflictRecord, CveRecord};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("csv error in {context}: {detail}")]
    Csv { context: String, detail: String },
    #[error("{context}: expected field `{field}` in the first data row")]
    MissingField { context: String, field: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("json error in {path}: {detail}")]
    Json { path: String, detail: String },
    #[error(
        "integrity check failed for {path}: manifest says {expected}, file hashes to {actual}"
    )]
    Integrity {
        path: String,
        expected: String,
        actual: String,
    },
    #[error("corpus is empty")]
    Empty,
}

/// One CVE record rendered as ordered `(field, value)` rows.
///
/// The first row is always `cve_id`; downstream stages (chunking, retrieval)
/// treat each row as one sentence of the document.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvDoc {
    pub cve_id: String,
    pub rows: Vec<(String, String)>,
}

/// Renders a record into its CSV document form.
///
/// Field order is fixed: `cve_id`, `description`, `base_severity`,
/// `base_score`, `severity_source`, `published`, `last_modified`, `source`.
/// Absent optional fields keep their row with an empty value so every
/// document has the same shape.
pub fn to_csv_doc(record: &CveRecord) -> CsvDoc {
    let opt = |s: Option<String>| s.unwrap_or_default();
    let rows = vec![
        ("cve_id".to_string(), record.cve_id.clone()),
        ("description".to_string(), record.description.clone()),
        (
            "base_severity".to_string(),
            opt(record.base_severity.map(|s| s.to_string())),
        ),
        (
            "base_score".to_string(),
            opt(record.base_score.map(|s| s.to_string())),
        ),
        (
            "severity_source".to_string(),
            opt(record.severity_source.map(|s| s.to_string())),
        ),
        (
            "published".to_string(),
            record.published.to_rfc3339_opts(SecondsFormat::Secs, true),
        ),
        (
            "last_modified".to_string(),
            record
                .last_modified
                .to_rfc3339_opts(SecondsFormat::Secs, true),
        ),
        ("source".to_string(), record.source.to_string()),
    ];
    CsvDoc {
        cve_id: record.cve_id.clone(),
        rows,
    }
}

fn csv_failure(context: &str, e: csv::Error) -> StoreError {
    StoreError::Csv {
        context: context.to_string(),
        detail: e.to_string(),
    }
}

/// Serializes a document as RFC 4180 CSV with a `field,value` header.
pub fn csv_doc_to_string(doc: &CsvDoc) -> Result<String, StoreError> {
    let context = &doc.cve_id;
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["field", "value"])
        .map_err(|e| csv_failure(context, e))?;
    for (field, value) in &doc.rows {
        writer
            .write_record([field, value])
            .map_err(|e| csv_failure(context, e))?;
    }
    let bytes = writer.into_inner().map_err(|e| StoreError::Csv {
        context: context.to_string(),
        detail: e.to_string(),
    })?;
    String::from_utf8(bytes).map_err(|e| StoreError::Csv {
        context: context.to_string(),
        detail: e.to_string(),
    })
}

/// Parses a document written by [`csv_doc_to_string`].
///
/// The first data row must carry the `cve_id` field; it names the document.
pub fn csv_doc_from_str(text: &str) -> Result<CsvDoc, StoreError> {
    let context = "csv document";
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| csv_failure(context, e))?;
    if headers.iter().ne(["field", "value"]) {
        return Err(StoreError::Csv {
            context: context.to_string(),
            detail: format!("unexpected header {headers:?}, want field,value"),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_failure(context, e))?;
        rows.push((record[0].to_string(), record[1].to_string()));
    }
    match rows.first() {
        Some((field, value)) if field == "cve_id" && !value.is_empty() => Ok(CsvDoc {
            cve_id: value.clone(),
            rows,
        }),
        _ => Err(StoreError::MissingField {
            context: context.to_string(),
            field: "cve_id".to_string(),
        }),
    }
}

/// One row of the merged corpus: a document row tagged with its CVE id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedRow {
    pub cve_id: String,
    pub field: String,
    pub value: String,
}

/// The merged retrieval corpus: every document's rows, in document order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MergedCorpus {
    pub rows: Vec<MergedRow>,
}

impl MergedCorpus {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Number of distinct CVE ids present.
    pub fn record_count(&self) -> usize {
        let mut seen = std::collections::BTreeSet::new();
        for row in &self.rows {
            seen.insert(row.cve_id.as_str());
        }
        seen.len()
    }

    pub fn to_csv_string(&self) -> Result<String, StoreError> {
        let context = "merged corpus";
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(["cve_id", "field", "value"])
            .map_err(|e| csv_failure(context, e))?;
        for row in &self.rows {
            writer
                .write_record([&row.cve_id, &row.field, &row.value])
                .map_err(|e| csv_failure(context, e))?;
        }
        let bytes = writer.into_inner().map_err(|e| StoreError::Csv {
            context: context.to_string(),
            detail: e.to_string(),
        })?;
        String::from_utf8(bytes).map_err(|e| StoreError::Csv {
            context: context.to_string(),
            detail: e.to_string(),
        })
    }

    pub fn from_csv_str(text: &str) -> Result<Self, StoreError> {
        let context = "merged corpus";
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| csv_failure(context, e))?;
        if headers.iter().ne(["cve_id", "field", "value"]) {
            return Err(StoreError::Csv {
                context: context.to_string(),
                detail: format!("unexpected header {headers:?}, want cve_id,field,value"),
            });
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| csv_failure(context, e))?;
            rows.push(MergedRow {
                cve_id: record[0].to_string(),
                field: record[1].to_string(),
                value: record[2].to_string(),
            });
        }
        Ok(MergedCorpus { rows })
    }
}

/// Concatenates documents into the merged corpus, preserving input order.
pub fn merge_corpus(docs: &[CsvDoc]) -> Result<MergedCorpus, StoreError> {
    if docs.is_empty() {
        return Err(StoreError::Empty);
    }
    let mut rows = Vec::new();
    for doc in docs {
        for (field, value) in &doc.rows {
            rows.push(MergedRow {
                cve_id: doc.cve_id.clone(),
                field: field.clone(),
                value: value.clone(),
            });
        }
    }
    Ok(MergedCorpus { rows })
}

/// Serialized form of a conflict record.
///
/// The key names and their order are a wire contract — downstream consumers
/// parse these files positionally — so serialization must go through
/// [`ConflictJson::to_json_string`], which preserves exactly this layout:
/// `CVE-ID`, `OldValue`, `NewValue`, `Changed details`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictJson {
    #[serde(rename = "CVE-ID")]
    pub cve_id: String,
    #[serde(rename = "OldValue")]
    pub old_value: String,
    #[serde(rename = "NewValue")]
    pub new_value: String,
    #[serde(rename = "Changed details")]
    pub changed_details: String,
}

impl From<&ConflictRecord> for ConflictJson {
    fn from(record: &ConflictRecord) -> Self {
        ConflictJson {
            cve_id: record.cve_id.clone(),
            old_value: record.old_value.clone(),
            new_value: record.new_value.clone(),
            changed_details: record.changed_details.clone(),
        }
    }
}

impl ConflictJson {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("string-only struct serializes")
    }

    /// Rebuilds the full record; `change_year` lives in the conflicts
    /// manifest, not in the four-key JSON itself.
    pub fn into_record(self, change_year: i32) -> ConflictRecord {
        ConflictRecord {
            cve_id: self.cve_id,
            old_value: self.old_value,
            new_value: self.new_value,
            changed_details: self.changed_details,
            change_year,
        }
    }
}

/// Writes a conflict record to `path` in the fixed four-key JSON layout.
pub fn write_conflict_json(record: &ConflictRecord, path: &Path) -> Result<(), StoreError> {
    let mut text = ConflictJson::from(record).to_json_string();
    text.push('\n');
    std::fs::write(path, text).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub cve_id: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictManifestEntry {
    pub cve_id: String,
    pub path: String,
    pub change_year: i32,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Directory layout for corpus artifacts:
///
/// ```text
/// <root>/csv/<CVE-ID>.csv          one document per record
/// <root>/manifest.jsonl            {cve_id, path, sha256} per document
/// <root>/conflicts/<CVE-ID>.json   four-key conflict files
/// <root>/conflicts/manifest.jsonl  {cve_id, path, change_year} per conflict
/// ```
///
/// Manifests are written after the files they describe, so a crash mid-save
/// leaves at worst unreferenced files, never a manifest pointing at missing
/// or partial ones. Loading verifies each document against its recorded
/// sha256.
pub struct CorpusStore {
    root: PathBuf,
}

impl CorpusStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        CorpusStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn csv_dir(&self) -> PathBuf {
        self.root.join("csv")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.jsonl")
    }

    pub fn conflicts_dir(&self) -> PathBuf {
        self.root.join("conflicts")
    }

    pub fn conflicts_manifest_path(&self) -> PathBuf {
        self.conflicts_dir().join("manifest.jsonl")
    }

    fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
        move |source| StoreError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Writes every document, then the manifest. Returns the manifest entries
    /// in input order.
    pub fn save_corpus(&self, docs: &[CsvDoc]) -> Result<Vec<ManifestEntry>, StoreError> {
        if docs.is_empty() {
            return Err(StoreError::Empty);
        }
        let dir = self.csv_dir();
        std::fs::create_dir_all(&dir).map_err(Self::io_err(&dir))?;
        let mut entries = Vec::with_capacity(docs.len());
        for doc in docs {
            let text = csv_doc_to_string(doc)?;
            let rel = format!("csv/{}.csv", doc.cve_id);
            let path = self.root.join(&rel);
            std::fs::write(&path, &text).map_err(Self::io_err(&path))?;
            entries.push(ManifestEntry {
                cve_id: doc.cve_id.clone(),
                path: rel,
                sha256: sha256_hex(text.as_bytes()),
            });
        }
        let manifest: String = entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("manifest entry serializes") + "\n")
            .collect();
        let manifest_path = self.manifest_path();
        std::fs::write(&manifest_path, manifest).map_err(Self::io_err(&manifest_path))?;
        Ok(entries)
    }

    pub fn load_manifest(&self) -> Result<Vec<ManifestEntry>, StoreError> {
        let path = self.manifest_path();
        let text = std::fs::read_to_string(&path).map_err(Self::io_err(&path))?;
        parse_jsonl(&text, &path)
    }

    /// Loads every document listed in the manifest, verifying checksums.
    pub fn load_corpus(&self) -> Result<Vec<CsvDoc>, StoreError> {
        let mut docs = Vec::new();
        for entry in self.load_manifest()? {
            let path = self.root.join(&entry.path);
            let text = std::fs::read_to_string(&path).map_err(Self::io_err(&path))?;
            let actual = sha256_hex(text.as_bytes());
            if actual != entry.sha256 {
                return Err(StoreError::Integrity {
                    path: entry.path,
                    expected: entry.sha256,
                    actual,
                });
            }
            let doc = csv_doc_from_str(&text)?;
            if doc.cve_id != entry.cve_id {
                return Err(StoreError::Csv {
                    context: entry.path,
                    detail: format!(
                        "manifest names {} but the document is for {}",
                        entry.cve_id, doc.cve_id
                    ),
                });
            }
            docs.push(doc);
        }
        Ok(docs)
    }

    /// Writes one conflict file (suffixing `-2`, `-3`, … when the id already
    /// has one) and appends it to the conflicts manifest. Returns the path
    /// written.
    pub fn write_conflict(&self, record: &ConflictRecord) -> Result<PathBuf, StoreError> {
        let dir = self.conflicts_dir();
        std::fs::create_dir_all(&dir).map_err(Self::io_err(&dir))?;
        let mut n = 1usize;
        let (rel, path) = loop {
            let rel = if n == 1 {
                format!("conflicts/{}.json", record.cve_id)
            } else {
                format!("conflicts/{}-{n}.json", record.cve_id)
            };
            let path = self.root.join(&rel);
            if !path.exists() {
                break (rel, path);
            }
            n += 1;
        };
        write_conflict_json(record, &path)?;
        let entry = ConflictManifestEntry {
            cve_id: record.cve_id.clone(),
            path: rel,
            change_year: record.change_year,
        };
        let line = serde_json::to_string(&entry).expect("manifest entry serializes") + "\n";
        let manifest_path = self.conflicts_manifest_path();
        let mut manifest = match std::fs::read_to_string(&manifest_path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(source) => {
                return Err(StoreError::Io {
                    path: manifest_path.display().to_string(),
                    source,
                })
            }
        };
        manifest.push_str(&line);
        std::fs::write(&manifest_path, manifest).map_err(Self::io_err(&manifest_path))?;
        Ok(path)
    }

    /// Loads all recorded conflicts; a store with no conflicts manifest has
    /// simply recorded none.
    pub fn load_conflicts(&self) -> Result<Vec<ConflictRecord>, StoreError> {
        let manifest_path = self.conflicts_manifest_path();
        let text = match std::fs::read_to_string(&manifest_path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(source) => {
                return Err(StoreError::Io {
                    path: manifest_path.display().to_string(),
                    source,
                })
            }
        };
        let entries: Vec<ConflictManifestEntry> = parse_jsonl(&text, &manifest_path)?;
        let mut records = Vec::with_capacity(entries.len());
        for entry in entries {
            let path = self.root.join(&entry.path);
            let json = std::fs::read_to_string(&path).map_err(Self::io_err(&path))?;
            let conflict: ConflictJson =
                serde_json::from_str(&json).map_err(|e| StoreError::Json {
                    path: entry.path.clone(),
                    detail: e.to_string(),
                })?;
            records.push(conflict.into_record(entry.change_year));
        }
        Ok(records)
    }
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(
    text: &str,
    path: &Path,
) -> Result<Vec<T>, StoreError> {
    text.lines()
        .filter(|line| !line.trim().is_empty())
        .map(|line| {
            serde_json::from_str(line).map_err(|e| StoreError::Json {
                path: path.display().to_string(),
                detail: e.to_string(),
            })
        })
        .collect()
}
