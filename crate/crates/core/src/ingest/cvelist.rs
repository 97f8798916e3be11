//! Lookup of historical CVE records kept as one JSON file per id, the way a
//! local CVE List v5 checkout (or a fixture directory) lays them out.

use std::path::{Path, PathBuf};

use super::{parse_cve_json, CveRecord, IngestError};

/// Path where `cve_id`'s record lives under `dir`.
pub fn record_path(dir: &Path, cve_id: &str) -> PathBuf {
    dir.join(format!("{cve_id}.json"))
}

/// Reads and parses `cve_id`'s record from `dir`.
///
/// A missing file is `Ok(None)` — the id simply has no local history.
/// Anything else that goes wrong (unreadable file, malformed record) is an
/// error.
pub fn read_local_record(dir: &Path, cve_id: &str) -> Result<Option<CveRecord>, IngestError> {
    let path = record_path(dir, cve_id);
    let raw = match std::fs::read_to_string(&path) {
        Ok(raw) => raw,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(source) => {
            return Err(IngestError::Io {
                path: path.display().to_string(),
                source,
            })
        }
    };
    let record = parse_cve_json(&raw).map_err(|e| IngestError::Fixture {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    if record.cve_id != cve_id {
        return Err(IngestError::IdMismatch {
            left: cve_id.to_string(),
            right: record.cve_id,
        });
    }
    Ok(Some(record))
}

/// Lists the CVE ids that have a record under `dir`, sorted.
pub fn list_local_ids(dir: &Path) -> Result<Vec<String>, IngestError> {
    let io = |source: std::io::Error| IngestError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut ids: Vec<String> = std::fs::read_dir(dir)
        .map_err(io)?
        .collect::<Result<Vec<_>, _>>()
        .map_err(io)?
        .into_iter()
        .map(|entry| entry.path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .filter_map(|p| p.file_stem().and_then(|s| s.to_str()).map(str::to_string))
        .collect();
    ids.sort();
    Ok(ids)
}
