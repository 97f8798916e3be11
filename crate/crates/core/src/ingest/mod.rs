//! CVE record ingestion and normalization.
//!
//! Two wire formats are understood: NVD API 2.0 vulnerability items and
//! CVE List v5 records. Both normalize into [`CveRecord`] with the original
//! text preserved verbatim in `raw`. Severity falls back CVSS v3.1 → v3.0 →
//! v2, recording which metric supplied it, and the qualitative band is
//! validated against the numeric score at parse time.
//!
//! Change tracking lives here too: [`build_conflict_record`] pairs an old and
//! a new version of the same CVE into a [`ConflictRecord`], and
//! [`describe_field_changes`] produces the deterministic fallback change
//! summary used when no language model is wired in.

mod cvelist;
mod nvd;

pub use cvelist::{list_local_ids, read_local_record, record_path};
pub use nvd::{NvdClient, RateLimiter, DEFAULT_NVD_API_URL, DEFAULT_RATE_LIMIT};

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid JSON at byte {offset} (line {line}, column {column}): {message}")]
    Json {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("record schema error: {detail}")]
    Schema { detail: String },
    #[error("record {cve_id} failed validation: {detail}")]
    Invalid { cve_id: String, detail: String },
    #[error("records refer to different CVEs: {left} vs {right}")]
    IdMismatch { left: String, right: String },
    #[error("records for {cve_id} are identical; no conflict to record")]
    NoChange { cve_id: String },
    #[error("invalid date window: {detail}")]
    Window { detail: String },
    #[error("fixture {path}: {detail}")]
    Fixture { path: String, detail: String },
    #[error("NVD endpoint {url} returned status {status}")]
    Status { url: String, status: u16 },
    #[error("network error calling {url}: {detail}")]
    Network { url: String, detail: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Qualitative CVSS severity band, ordered by criticality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Severity {
    None,
    Low,
    Medium,
    High,
    Critical,
}

impl Severity {
    /// CVSS v3.x qualitative band for a base score.
    pub fn from_v3_score(score: f64) -> Option<Severity> {
        match score {
            s if (0.0..=0.0).contains(&s) => Some(Severity::None),
            s if (0.1..=3.9).contains(&s) => Some(Severity::Low),
            s if (4.0..=6.9).contains(&s) => Some(Severity::Medium),
            s if (7.0..=8.9).contains(&s) => Some(Severity::High),
            s if (9.0..=10.0).contains(&s) => Some(Severity::Critical),
            _ => None,
        }
    }

    /// CVSS v2 band (v2 has no NONE/CRITICAL tiers).
    pub fn from_v2_score(score: f64) -> Option<Severity> {
        match score {
            s if (0.0..=3.9).contains(&s) => Some(Severity::Low),
            s if (4.0..=6.9).contains(&s) => Some(Severity::Medium),
            s if (7.0..=10.0).contains(&s) => Some(Severity::High),
            _ => None,
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Severity::None => "NONE",
            Severity::Low => "LOW",
            Severity::Medium => "MEDIUM",
            Severity::High => "HIGH",
            Severity::Critical => "CRITICAL",
        };
        f.write_str(name)
    }
}

impl FromStr for Severity {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "NONE" => Ok(Severity::None),
            "LOW" => Ok(Severity::Low),
            "MEDIUM" => Ok(Severity::Medium),
            "HIGH" => Ok(Severity::High),
            "CRITICAL" => Ok(Severity::Critical),
            other => Err(IngestError::Schema {
                detail: format!("unknown severity {other:?}"),
            }),
        }
    }
}

/// Which CVSS metric supplied the severity/score pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeveritySource {
    #[serde(rename = "cvss-v3.1")]
    CvssV31,
    #[serde(rename = "cvss-v3.0")]
    CvssV30,
    #[serde(rename = "cvss-v2")]
    CvssV2,
}

impl fmt::Display for SeveritySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SeveritySource::CvssV31 => "cvss-v3.1",
            SeveritySource::CvssV30 => "cvss-v3.0",
            SeveritySource::CvssV2 => "cvss-v2",
        };
        f.write_str(name)
    }
}

impl FromStr for SeveritySource {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cvss-v3.1" => Ok(SeveritySource::CvssV31),
            "cvss-v3.0" => Ok(SeveritySource::CvssV30),
            "cvss-v2" => Ok(SeveritySource::CvssV2),
            other => Err(IngestError::Schema {
                detail: format!("unknown severity source {other:?}"),
            }),
        }
    }
}

/// Wire format a record was normalized from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordSource {
    #[serde(rename = "nvd-api")]
    NvdApi,
    #[serde(rename = "cvelist-v5")]
    CveListV5,
}

impl fmt::Display for RecordSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            RecordSource::NvdApi => "nvd-api",
            RecordSource::CveListV5 => "cvelist-v5",
        };
        f.write_str(name)
    }
}

impl FromStr for RecordSource {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nvd-api" => Ok(RecordSource::NvdApi),
            "cvelist-v5" => Ok(RecordSource::CveListV5),
            other => Err(IngestError::Schema {
                detail: format!("unknown record source {other:?}"),
            }),
        }
    }
}

/// A normalized CVE record. Optional metrics stay `None` when the feed
/// omitted them — absence is recorded, never defaulted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CveRecord {
    pub cve_id: String,
    pub description: String,
    pub base_severity: Option<Severity>,
    pub base_score: Option<f64>,
    pub severity_source: Option<SeveritySource>,
    pub published: DateTime<Utc>,
    pub last_modified: DateTime<Utc>,
    pub source: RecordSource,
    /// Original record text, preserved verbatim.
    pub raw: String,
}

fn cve_id_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^CVE-\d{4}-\d{4,}$").expect("static pattern"))
}

impl CveRecord {
    /// Enforces the structural invariants: well-formed id, ordered
    /// timestamps, and severity consistent with the score under the metric
    /// version that supplied them.
    pub fn validate(&self) -> Result<(), IngestError> {
        let invalid = |detail: String| IngestError::Invalid {
            cve_id: self.cve_id.clone(),
            detail,
        };
        if !cve_id_pattern().is_match(&self.cve_id) {
            return Err(invalid(format!("malformed CVE id {:?}", self.cve_id)));
        }
        if self.last_modified < self.published {
            return Err(invalid(format!(
                "last_modified {} precedes published {}",
                self.last_modified, self.published
            )));
        }
        if let (Some(severity), Some(score), Some(source)) =
            (self.base_severity, self.base_score, self.severity_source)
        {
            if !(0.0..=10.0).contains(&score) {
                return Err(invalid(format!("base score {score} outside [0, 10]")));
            }
            let banded = match source {
                SeveritySource::CvssV31 | SeveritySource::CvssV30 => Severity::from_v3_score(score),
                SeveritySource::CvssV2 => Severity::from_v2_score(score),
            };
            if banded != Some(severity) {
                return Err(invalid(format!(
                    "severity {severity} inconsistent with {source} base score {score}"
                )));
            }
        }
        Ok(())
    }

    /// Year component of the CVE identifier (`CVE-2024-…` → 2024).
    pub fn id_year(&self) -> Option<i32> {
        self.cve_id.split('-').nth(1)?.parse().ok()
    }
}

#[derive(Deserialize)]
struct LangText {
    lang: String,
    value: String,
}

fn english_description(descriptions: &[LangText]) -> Result<String, IngestError> {
    descriptions
        .iter()
        .find(|d| d.lang == "en")
        .or_else(|| descriptions.iter().find(|d| d.lang.starts_with("en")))
        .map(|d| d.value.clone())
        .ok_or_else(|| IngestError::Schema {
            detail: "no English description entry".into(),
        })
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct NvdCveItem {
    id: String,
    published: String,
    last_modified: String,
    #[serde(default)]
    descriptions: Vec<LangText>,
    #[serde(default)]
    metrics: NvdMetrics,
}

#[derive(Deserialize, Default)]
struct NvdMetrics {
    #[serde(default, rename = "cvssMetricV31")]
    v31: Vec<CvssV3Metric>,
    #[serde(default, rename = "cvssMetricV30")]
    v30: Vec<CvssV3Metric>,
    #[serde(default, rename = "cvssMetricV2")]
    v2: Vec<CvssV2Metric>,
}

#[derive(Deserialize)]
struct CvssV3Metric {
    #[serde(rename = "cvssData")]
    cvss_data: CvssV3Data,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct CvssV3Data {
    base_score: f64,
    base_severity: String,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct CvssV2Metric {
    cvss_data: CvssV2Data,
    #[serde(default)]
    base_severity: Option<String>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct CvssV2Data {
    base_score: f64,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct CveV5Record {
    cve_metadata: CveV5Metadata,
    containers: CveV5Containers,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct CveV5Metadata {
    cve_id: String,
    #[serde(default)]
    date_published: Option<String>,
    #[serde(default)]
    date_updated: Option<String>,
}

#[derive(Deserialize)]
struct CveV5Containers {
    cna: CveV5Cna,
}

#[derive(Deserialize)]
struct CveV5Cna {
    #[serde(default)]
    descriptions: Vec<LangText>,
    #[serde(default)]
    metrics: Vec<CveV5Metric>,
}

#[derive(Deserialize)]
struct CveV5Metric {
    #[serde(default, rename = "cvssV3_1")]
    v3_1: Option<CvssV3Data>,
    #[serde(default, rename = "cvssV3_0")]
    v3_0: Option<CvssV3Data>,
    #[serde(default, rename = "cvssV2_0")]
    v2_0: Option<CvssV2Data>,
}

fn parse_timestamp(text: &str, field: &str) -> Result<DateTime<Utc>, IngestError> {
    if let Ok(t) = DateTime::parse_from_rfc3339(text) {
        return Ok(t.with_timezone(&Utc));
    }
    // NVD API 2.0 emits naive ISO timestamps; they are UTC by contract.
    if let Ok(t) = NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S%.f") {
        return Ok(t.and_utc());
    }
    if let Ok(d) = NaiveDate::parse_from_str(text, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("valid wall time").and_utc());
    }
    Err(IngestError::Schema {
        detail: format!("{field}: unparseable timestamp {text:?}"),
    })
}

type SeverityTriple = Option<(Severity, f64, SeveritySource)>;

fn severity_from_nvd(metrics: &NvdMetrics) -> Result<SeverityTriple, IngestError> {
    if let Some(m) = metrics.v31.first() {
        let severity = m.cvss_data.base_severity.parse()?;
        return Ok(Some((
            severity,
            m.cvss_data.base_score,
            SeveritySource::CvssV31,
        )));
    }
    if let Some(m) = metrics.v30.first() {
        let severity = m.cvss_data.base_severity.parse()?;
        return Ok(Some((
            severity,
            m.cvss_data.base_score,
            SeveritySource::CvssV30,
        )));
    }
    if let Some(m) = metrics.v2.first() {
        let score = m.cvss_data.base_score;
        let severity = match &m.base_severity {
            Some(s) => s.parse()?,
            None => Severity::from_v2_score(score).ok_or_else(|| IngestError::Schema {
                detail: format!("CVSS v2 base score {score} outside [0, 10]"),
            })?,
        };
        return Ok(Some((severity, score, SeveritySource::CvssV2)));
    }
    Ok(None)
}

fn severity_from_v5(metrics: &[CveV5Metric]) -> Result<SeverityTriple, IngestError> {
    if let Some(d) = metrics.iter().find_map(|m| m.v3_1.as_ref()) {
        return Ok(Some((
            d.base_severity.parse()?,
            d.base_score,
            SeveritySource::CvssV31,
        )));
    }
    if let Some(d) = metrics.iter().find_map(|m| m.v3_0.as_ref()) {
        return Ok(Some((
            d.base_severity.parse()?,
            d.base_score,
            SeveritySource::CvssV30,
        )));
    }
    if let Some(d) = metrics.iter().find_map(|m| m.v2_0.as_ref()) {
        let severity =
            Severity::from_v2_score(d.base_score).ok_or_else(|| IngestError::Schema {
                detail: format!("CVSS v2 base score {} outside [0, 10]", d.base_score),
            })?;
        return Ok(Some((severity, d.base_score, SeveritySource::CvssV2)));
    }
    Ok(None)
}

fn json_error(raw: &str, err: &serde_json::Error) -> IngestError {
    let line = err.line();
    let column = err.column();
    let offset = raw
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum::<usize>()
        + column.saturating_sub(1);
    IngestError::Json {
        offset,
        line,
        column,
        message: err.to_string(),
    }
}

/// Parses one CVE record from either wire format, keeping `raw` verbatim.
///
/// Accepted layouts: a CVE List v5 record (`cveMetadata` present), an NVD
/// API item wrapped as `{"cve": {…}}`, or the bare NVD item itself.
pub fn parse_cve_json(raw: &str) -> Result<CveRecord, IngestError> {
    let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| json_error(raw, &e))?;
    let object = value.as_object().ok_or_else(|| IngestError::Schema {
        detail: "top-level JSON value is not an object".into(),
    })?;

    let schema = |e: serde_json::Error| IngestError::Schema {
        detail: e.to_string(),
    };

    let record = if object.contains_key("cveMetadata") {
        let v5: CveV5Record = serde_json::from_value(value.clone()).map_err(schema)?;
        let published =
            v5.cve_metadata
                .date_published
                .as_deref()
                .ok_or_else(|| IngestError::Schema {
                    detail: "cveMetadata.datePublished missing".into(),
                })?;
        let published = parse_timestamp(published, "datePublished")?;
        let last_modified = match v5.cve_metadata.date_updated.as_deref() {
            Some(t) => parse_timestamp(t, "dateUpdated")?,
            None => published,
        };
        let (base_severity, base_score, severity_source) =
            match severity_from_v5(&v5.containers.cna.metrics)? {
                Some((sev, score, src)) => (Some(sev), Some(score), Some(src)),
                None => (None, None, None),
            };
        CveRecord {
            cve_id: v5.cve_metadata.cve_id,
            description: english_description(&v5.containers.cna.descriptions)?,
            base_severity,
            base_score,
            severity_source,
            published,
            last_modified,
            source: RecordSource::CveListV5,
            raw: raw.to_string(),
        }
    } else if object.contains_key("cve") || object.contains_key("id") {
        let inner = object.get("cve").cloned().unwrap_or(value.clone());
        let item: NvdCveItem = serde_json::from_value(inner).map_err(schema)?;
        let (base_severity, base_score, severity_source) = match severity_from_nvd(&item.metrics)? {
            Some((sev, score, src)) => (Some(sev), Some(score), Some(src)),
            None => (None, None, None),
        };
        CveRecord {
            cve_id: item.id,
            description: english_description(&item.descriptions)?,
            base_severity,
            base_score,
            severity_source,
            published: parse_timestamp(&item.published, "published")?,
            last_modified: parse_timestamp(&item.last_modified, "lastModified")?,
            source: RecordSource::NvdApi,
            raw: raw.to_string(),
        }
    } else {
        return Err(IngestError::Schema {
            detail: "unrecognized record layout: expected a CVE v5 record or an NVD API item"
                .into(),
        });
    };

    record.validate()?;
    Ok(record)
}

/// Keeps only records whose qualitative severity is exactly HIGH.
pub fn filter_high_severity(records: Vec<CveRecord>) -> Vec<CveRecord> {
    records
        .into_iter()
        .filter(|r| r.base_severity == Some(Severity::High))
        .collect()
}

/// Inclusive date range over record modification times.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DateWindow {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl DateWindow {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self, IngestError> {
        if start > end {
            return Err(IngestError::Window {
                detail: format!("start {start} is after end {end}"),
            });
        }
        Ok(DateWindow { start, end })
    }

    /// Parses `YYYY-MM-DD..YYYY-MM-DD`; both days are included whole.
    pub fn parse(text: &str) -> Result<Self, IngestError> {
        let window = |detail: String| IngestError::Window { detail };
        let (start, end) = text
            .split_once("..")
            .ok_or_else(|| window(format!("expected YYYY-MM-DD..YYYY-MM-DD, got {text:?}")))?;
        let day = |s: &str| {
            NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
                .map_err(|e| window(format!("bad date {s:?}: {e}")))
        };
        let start = day(start)?.and_hms_opt(0, 0, 0).expect("valid wall time");
        let end = day(end)?
            .and_hms_milli_opt(23, 59, 59, 999)
            .expect("valid wall time");
        DateWindow::new(start.and_utc(), end.and_utc())
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.start <= t && t <= self.end
    }
}

/// A detected contradiction between two versions of the same CVE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictRecord {
    pub cve_id: String,
    /// Record content before the change, verbatim.
    pub old_value: String,
    /// Record content after the change, verbatim.
    pub new_value: String,
    /// Summary of the delta (model-generated or rule-derived).
    pub changed_details: String,
    /// Year the new version was last modified.
    pub change_year: i32,
}

/// Pairs two versions of one CVE into a conflict record.
///
/// Succeeds iff the ids match and the raw texts differ, so conflict
/// detection is exactly raw-text inequality.
pub fn build_conflict_record(
    old: &CveRecord,
    new: &CveRecord,
    summary: &str,
) -> Result<ConflictRecord, IngestError> {
    if old.cve_id != new.cve_id {
        return Err(IngestError::IdMismatch {
            left: old.cve_id.clone(),
            right: new.cve_id.clone(),
        });
    }
    if old.raw == new.raw {
        return Err(IngestError::NoChange {
            cve_id: old.cve_id.clone(),
        });
    }
    if summary.trim().is_empty() {
        return Err(IngestError::Invalid {
            cve_id: old.cve_id.clone(),
            detail: "change summary must be non-empty".into(),
        });
    }
    Ok(ConflictRecord {
        cve_id: new.cve_id.clone(),
        old_value: old.raw.clone(),
        new_value: new.raw.clone(),
        changed_details: summary.to_string(),
        change_year: new.last_modified.year(),
    })
}

/// Deterministic field-level change summary: the offline stand-in for a
/// model-written one.
pub fn describe_field_changes(old: &CveRecord, new: &CveRecord) -> String {
    let mut parts = Vec::new();
    if old.description != new.description {
        parts.push(format!(
            "description revised ({} -> {} chars)",
            old.description.chars().count(),
            new.description.chars().count()
        ));
    }
    let fmt_opt = |v: &Option<String>| v.clone().unwrap_or_else(|| "unset".into());
    let old_score = old.base_score.map(|s| s.to_string());
    let new_score = new.base_score.map(|s| s.to_string());
    if old_score != new_score {
        parts.push(format!(
            "base_score {} -> {}",
            fmt_opt(&old_score),
            fmt_opt(&new_score)
        ));
    }
    let old_sev = old.base_severity.map(|s| s.to_string());
    let new_sev = new.base_severity.map(|s| s.to_string());
    if old_sev != new_sev {
        parts.push(format!(
            "base_severity {} -> {}",
            fmt_opt(&old_sev),
            fmt_opt(&new_sev)
        ));
    }
    if old.last_modified != new.last_modified {
        parts.push(format!(
            "last_modified {} -> {}",
            old.last_modified.format("%Y-%m-%d"),
            new.last_modified.format("%Y-%m-%d")
        ));
    }
    if parts.is_empty() {
        "record content changed with normalized fields unchanged".into()
    } else {
        parts.join("; ")
    }
}
