//! NVD API 2.0 client: fixture-directory mode for offline runs, live HTTP
//! mode with pagination and a rolling-window rate limiter.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::Deserialize;

use super::{parse_cve_json, CveRecord, DateWindow, IngestError};

pub const DEFAULT_NVD_API_URL: &str = "https://services.nvd.nist.gov/rest/json/cves/2.0";

/// NVD's public quota without an API key: 5 requests per rolling 30 s.
pub const DEFAULT_RATE_LIMIT: (usize, Duration) = (5, Duration::from_secs(30));

const LIVE_PAGE_SIZE: usize = 2000;
const THROTTLE_RETRIES: u32 = 3;

/// Rolling-window rate limiter.
///
/// [`RateLimiter::reserve`] books a request slot at `now` and returns how
/// long the caller must wait before issuing it, which keeps the limiter
/// testable against a simulated clock.
#[derive(Debug)]
pub struct RateLimiter {
    max_requests: usize,
    window: Duration,
    booked: VecDeque<Instant>,
}

impl RateLimiter {
    pub fn new(max_requests: usize, window: Duration) -> Self {
        assert!(
            max_requests >= 1,
            "rate limit must allow at least one request"
        );
        RateLimiter {
            max_requests,
            window,
            booked: VecDeque::new(),
        }
    }

    /// Books the next request slot and returns the required wait.
    pub fn reserve(&mut self, now: Instant) -> Duration {
        while let Some(front) = self.booked.front() {
            if *front + self.window <= now {
                self.booked.pop_front();
            } else {
                break;
            }
        }
        if self.booked.len() < self.max_requests {
            self.booked.push_back(now);
            return Duration::ZERO;
        }
        let earliest = *self.booked.front().expect("queue is full, hence non-empty");
        let ready_at = earliest + self.window;
        self.booked.pop_front();
        self.booked.push_back(ready_at);
        ready_at - now
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct NvdPage {
    #[serde(default)]
    vulnerabilities: Vec<NvdPageItem>,
    #[serde(default)]
    total_results: Option<usize>,
}

#[derive(Deserialize)]
struct NvdPageItem {
    cve: serde_json::Value,
}

enum NvdSource {
    FixtureDir(PathBuf),
    Live {
        base_url: String,
        api_key: Option<String>,
    },
}

/// Client for the NVD "changed CVEs" feed.
///
/// Fixture mode reads `<dir>/*.json` page files shaped like NVD API
/// responses, in numeric-then-lexicographic name order, with no rate
/// limiting. Live mode paginates the real endpoint under the rolling-window
/// limiter and retries throttling responses.
pub struct NvdClient {
    source: NvdSource,
    limiter: RateLimiter,
}

impl NvdClient {
    pub fn fixture(dir: impl Into<PathBuf>) -> Self {
        let (max, window) = DEFAULT_RATE_LIMIT;
        NvdClient {
            source: NvdSource::FixtureDir(dir.into()),
            limiter: RateLimiter::new(max, window),
        }
    }

    pub fn live(
        base_url: impl Into<String>,
        api_key: Option<String>,
        max_requests: usize,
        window: Duration,
    ) -> Self {
        NvdClient {
            source: NvdSource::Live {
                base_url: base_url.into(),
                api_key,
            },
            limiter: RateLimiter::new(max_requests, window),
        }
    }

    /// Fetches every record whose `lastModified` falls inside `window`,
    /// exhausting pagination.
    pub fn fetch_changes(&mut self, window: &DateWindow) -> Result<Vec<CveRecord>, IngestError> {
        match &self.source {
            NvdSource::FixtureDir(dir) => fetch_from_fixtures(dir, window),
            NvdSource::Live { base_url, api_key } => {
                let base_url = base_url.clone();
                let api_key = api_key.clone();
                self.fetch_live(&base_url, api_key.as_deref(), window)
            }
        }
    }

    fn fetch_live(
        &mut self,
        base_url: &str,
        api_key: Option<&str>,
        window: &DateWindow,
    ) -> Result<Vec<CveRecord>, IngestError> {
        let mut records = Vec::new();
        let mut start_index = 0usize;
        loop {
            let wait = self.limiter.reserve(Instant::now());
            if !wait.is_zero() {
                std::thread::sleep(wait);
            }
            let page = request_page(base_url, api_key, window, start_index)?;
            let fetched = page.vulnerabilities.len();
            collect_page(&page, window, base_url, &mut records)?;
            start_index += fetched;
            let total = page.total_results.unwrap_or(start_index);
            if fetched == 0 || start_index >= total {
                break;
            }
        }
        Ok(records)
    }
}

fn collect_page(
    page: &NvdPage,
    window: &DateWindow,
    origin: &str,
    records: &mut Vec<CveRecord>,
) -> Result<(), IngestError> {
    for item in &page.vulnerabilities {
        let raw = serde_json::to_string(&item.cve).expect("serde_json::Value serializes");
        let record = parse_cve_json(&raw).map_err(|e| IngestError::Fixture {
            path: origin.to_string(),
            detail: e.to_string(),
        })?;
        if window.contains(record.last_modified) {
            records.push(record);
        }
    }
    Ok(())
}

fn fetch_from_fixtures(dir: &Path, window: &DateWindow) -> Result<Vec<CveRecord>, IngestError> {
    let io = |source: std::io::Error| IngestError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut pages: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .collect::<Result<Vec<_>, _>>()
        .map_err(io)?
        .into_iter()
        .map(|entry| entry.path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    // Numeric page order when stems are numbers, name order otherwise.
    pages.sort_by_key(|p| {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        (stem.parse::<u64>().ok(), stem.to_string())
    });

    let mut records = Vec::new();
    for path in pages {
        let text = std::fs::read_to_string(&path).map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let page: NvdPage = serde_json::from_str(&text).map_err(|e| IngestError::Fixture {
            path: path.display().to_string(),
            detail: format!("not an NVD response page: {e}"),
        })?;
        collect_page(&page, window, &path.display().to_string(), &mut records)?;
    }
    Ok(records)
}

fn request_page(
    base_url: &str,
    api_key: Option<&str>,
    window: &DateWindow,
    start_index: usize,
) -> Result<NvdPage, IngestError> {
    let format_ts =
        |t: chrono::DateTime<chrono::Utc>| t.to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
    let mut attempt = 0u32;
    loop {
        let mut request = ureq::get(base_url)
            .query("lastModStartDate", format_ts(window.start))
            .query("lastModEndDate", format_ts(window.end))
            .query("resultsPerPage", LIVE_PAGE_SIZE.to_string())
            .query("startIndex", start_index.to_string());
        if let Some(key) = api_key {
            request = request.header("apiKey", key);
        }
        match request.call() {
            Ok(mut response) => {
                return response
                    .body_mut()
                    .read_json()
                    .map_err(|e| IngestError::Network {
                        url: base_url.to_string(),
                        detail: format!("unreadable response body: {e}"),
                    });
            }
            Err(ureq::Error::StatusCode(code)) if code == 429 || code == 503 => {
                attempt += 1;
                if attempt > THROTTLE_RETRIES {
                    return Err(IngestError::Status {
                        url: base_url.to_string(),
                        status: code,
                    });
                }
                // Back off for a fraction of the rolling window before retrying.
                std::thread::sleep(Duration::from_secs(6));
            }
            Err(ureq::Error::StatusCode(code)) => {
                return Err(IngestError::Status {
                    url: base_url.to_string(),
                    status: code,
                });
            }
            Err(e) => {
                return Err(IngestError::Network {
                    url: base_url.to_string(),
                    detail: e.to_string(),
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limiter_admits_burst_up_to_quota() {
        let mut limiter = RateLimiter::new(3, Duration::from_secs(30));
        let t0 = Instant::now();
        assert_eq!(limiter.reserve(t0), Duration::ZERO);
        assert_eq!(limiter.reserve(t0), Duration::ZERO);
        assert_eq!(limiter.reserve(t0), Duration::ZERO);
        assert_eq!(limiter.reserve(t0), Duration::from_secs(30));
    }

    #[test]
    fn five_requests_at_two_per_second_take_two_seconds() {
        let mut limiter = RateLimiter::new(2, Duration::from_secs(1));
        let t0 = Instant::now();
        let mut clock = Duration::ZERO;
        for _ in 0..5 {
            clock += limiter.reserve(t0 + clock);
        }
        assert!(clock >= Duration::from_secs(2));
    }

    #[test]
    fn expired_bookings_free_slots() {
        let mut limiter = RateLimiter::new(1, Duration::from_secs(1));
        let t0 = Instant::now();
        assert_eq!(limiter.reserve(t0), Duration::ZERO);
        assert_eq!(limiter.reserve(t0 + Duration::from_secs(2)), Duration::ZERO);
    }

    fn write_page(dir: &Path, name: &str, ids_and_modified: &[(&str, &str)]) {
        let items: Vec<String> = ids_and_modified
            .iter()
            .map(|(id, modified)| {
                let published = format!("{}-01-01T00:00:00.000", &modified[..4]);
                format!(
                    r#"{{"cve": {{"id": "{id}", "published": "{published}",
                        "lastModified": "{modified}",
                        "descriptions": [{{"lang": "en", "value": "entry for {id}"}}],
                        "metrics": {{"cvssMetricV31": [{{"cvssData": {{"baseScore": 7.5, "baseSeverity": "HIGH"}}}}]}}}}}}"#
                )
            })
            .collect();
        let page = format!(
            r#"{{"resultsPerPage": {n}, "startIndex": 0, "totalResults": {n}, "vulnerabilities": [{items}]}}"#,
            n = ids_and_modified.len(),
            items = items.join(",")
        );
        std::fs::write(dir.join(name), page).unwrap();
    }

    #[test]
    fn fixture_pages_read_in_numeric_order_and_window_filtered() {
        let dir = tempfile::tempdir().unwrap();
        write_page(
            dir.path(),
            "10.json",
            &[("CVE-2024-1010", "2024-06-15T00:00:00.000")],
        );
        write_page(
            dir.path(),
            "2.json",
            &[
                ("CVE-2024-1002", "2024-06-01T00:00:00.000"),
                ("CVE-2023-0999", "2023-06-01T00:00:00.000"),
            ],
        );
        let window = DateWindow::parse("2024-01-01..2024-12-31").unwrap();
        let records = NvdClient::fixture(dir.path())
            .fetch_changes(&window)
            .unwrap();
        let ids: Vec<&str> = records.iter().map(|r| r.cve_id.as_str()).collect();
        // 2.json sorts before 10.json numerically; the 2023 record is outside
        // the window.
        assert_eq!(ids, ["CVE-2024-1002", "CVE-2024-1010"]);
    }

    #[test]
    fn empty_fixture_dir_yields_no_records() {
        let dir = tempfile::tempdir().unwrap();
        let window = DateWindow::parse("2024-01-01..2024-12-31").unwrap();
        let records = NvdClient::fixture(dir.path())
            .fetch_changes(&window)
            .unwrap();
        assert!(records.is_empty());
    }

    #[test]
    fn missing_fixture_dir_is_io_error() {
        let window = DateWindow::parse("2024-01-01..2024-12-31").unwrap();
        let result = NvdClient::fixture("/nonexistent/nvd-fixtures").fetch_changes(&window);
        assert!(matches!(result, Err(IngestError::Io { .. })));
    }

    #[test]
    fn malformed_fixture_page_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("0.json"), "not json").unwrap();
        let window = DateWindow::parse("2024-01-01..2024-12-31").unwrap();
        match NvdClient::fixture(dir.path()).fetch_changes(&window) {
            Err(IngestError::Fixture { path, .. }) => assert!(path.ends_with("0.json")),
            other => panic!("expected Fixture error, got {other:?}"),
        }
    }
}
