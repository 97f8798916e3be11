//! Semantic chunking of the merged corpus.
//!
//! Every corpus row renders as one sentence, `"field: value\n"`. Rows group
//! into per-CVE parent documents; within a parent, the distance between
//! consecutive sentence embeddings is `1 − cosine`, and a chunk boundary
//! falls wherever that distance strictly exceeds a percentile of the
//! parent's own distances. Chunk texts concatenate back to the parent text —
//! chunking never drops or rewrites a byte.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::MergedCorpus;
use crate::embed::{cosine, EmbedError, Embedder, Embedding};

#[derive(Debug, Error)]
pub enum ChunkError {
    #[error("invalid chunking config: {detail}")]
    Config { detail: String },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("expected {expected} distances for {sentences} sentences, got {actual}")]
    Mismatch {
        sentences: usize,
        expected: usize,
        actual: usize,
    },
    #[error("percentile of an empty sample is undefined")]
    NoSample,
    #[error("cannot chunk an empty corpus")]
    EmptyCorpus,
    #[error("csv error writing chunk report: {detail}")]
    Report { detail: String },
}

/// Breakpoint selection parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakpointConfig {
    /// Percentile of a parent's distance distribution above which a boundary
    /// is placed. Strictly between 0 and 100.
    pub percentile: f64,
    /// Minimum sentences a chunk must collect before a boundary may fire.
    /// The final chunk of a parent may still be shorter.
    pub min_chunk_sentences: usize,
}

impl Default for BreakpointConfig {
    fn default() -> Self {
        BreakpointConfig {
            percentile: 90.0,
            min_chunk_sentences: 1,
        }
    }
}

impl BreakpointConfig {
    pub fn validate(&self) -> Result<(), ChunkError> {
        if !(self.percentile > 0.0 && self.percentile < 100.0) {
            return Err(ChunkError::Config {
                detail: format!("percentile must be in (0, 100), got {}", self.percentile),
            });
        }
        if self.min_chunk_sentences == 0 {
            return Err(ChunkError::Config {
                detail: "min_chunk_sentences must be at least 1".to_string(),
            });
        }
        Ok(())
    }
}

/// One CVE's rows assembled into a retrieval document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentDoc {
    pub parent_id: String,
    pub cve_id: String,
    pub sentences: Vec<String>,
    pub full_text: String,
}

/// A contiguous run of parent sentences with its embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub parent_id: String,
    pub text: String,
    /// Half-open `[start, end)` range into the parent's sentence list.
    pub sentence_span: (usize, usize),
    pub embedding: Embedding,
}

/// Per-parent breakpoint diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentStats {
    pub parent_id: String,
    pub distances: Vec<f64>,
    /// `None` when the parent has fewer than two sentences.
    pub threshold: Option<f64>,
}

/// Output of [`chunk_corpus`]: parents, their chunks, and the diagnostics
/// the chunk report is rendered from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRun {
    pub parents: Vec<ParentDoc>,
    pub chunks: Vec<Chunk>,
    pub stats: Vec<ParentStats>,
}

/// Renders one corpus row as a sentence.
pub fn row_sentence(field: &str, value: &str) -> String {
    format!("{field}: {value}\n")
}

/// Distances between consecutive sentences: `1 − cosine` of their embeddings.
pub fn sentence_distances(
    sentences: &[String],
    embedder: &dyn Embedder,
) -> Result<Vec<f64>, EmbedError> {
    let embeddings: Vec<Embedding> = sentences
        .iter()
        .map(|s| embedder.embed(s))
        .collect::<Result<_, _>>()?;
    embeddings
        .windows(2)
        .map(|pair| Ok(1.0 - cosine(&pair[0], &pair[1])?))
        .collect()
}

/// Percentile by linear interpolation between order statistics: rank
/// `h = p/100 · (n−1)` over the ascending sample, fractional ranks
/// interpolated between neighbors.
pub fn percentile_linear(sample: &[f64], p: f64) -> Result<f64, ChunkError> {
    if sample.is_empty() {
        return Err(ChunkError::NoSample);
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
    let h = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * (h - lo as f64))
}

/// Splits a parent's sentences into chunks at the percentile threshold.
///
/// A boundary falls after sentence `i` when `distances[i]` strictly exceeds
/// the threshold and the chunk being built has already collected
/// `min_chunk_sentences` sentences. A parent with fewer than two sentences
/// is one chunk.
pub fn split_at_percentile(
    sentences: &[String],
    distances: &[f64],
    config: &BreakpointConfig,
    embedder: &dyn Embedder,
    parent_id: &str,
) -> Result<Vec<Chunk>, ChunkError> {
    config.validate()?;
    if sentences.len() > 1 && distances.len() != sentences.len() - 1 {
        return Err(ChunkError::Mismatch {
            sentences: sentences.len(),
            expected: sentences.len() - 1,
            actual: distances.len(),
        });
    }
    if sentences.is_empty() {
        return Ok(Vec::new());
    }

    let threshold = if distances.is_empty() {
        None
    } else {
        Some(percentile_linear(distances, config.percentile)?)
    };

    let mut spans = Vec::new();
    let mut start = 0usize;
    if let Some(threshold) = threshold {
        for (i, &distance) in distances.iter().enumerate() {
            let chunk_len = i + 1 - start;
            if distance > threshold && chunk_len >= config.min_chunk_sentences {
                spans.push((start, i + 1));
                start = i + 1;
            }
        }
    }
    spans.push((start, sentences.len()));

    spans
        .into_iter()
        .enumerate()
        .map(|(j, (start, end))| {
            let text: String = sentences[start..end].concat();
            let embedding = embedder.embed(&text)?;
            Ok(Chunk {
                chunk_id: format!("{parent_id}-c{j:03}"),
                parent_id: parent_id.to_string(),
                text,
                sentence_span: (start, end),
                embedding,
            })
        })
        .collect()
}

/// Groups corpus rows into parents (first-appearance order of each CVE id,
/// non-contiguous rows of the same id merged) and chunks each parent with a
/// threshold computed from that parent's own distances.
pub fn chunk_corpus(
    corpus: &MergedCorpus,
    config: &BreakpointConfig,
    embedder: &dyn Embedder,
) -> Result<ChunkRun, ChunkError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(ChunkError::EmptyCorpus);
    }

    let mut order: Vec<&str> = Vec::new();
    let mut grouped: std::collections::BTreeMap<&str, Vec<String>> =
        std::collections::BTreeMap::new();
    for row in &corpus.rows {
        if !grouped.contains_key(row.cve_id.as_str()) {
            order.push(&row.cve_id);
        }
        grouped
            .entry(row.cve_id.as_str())
            .or_default()
            .push(row_sentence(&row.field, &row.value));
    }

    let mut parents = Vec::with_capacity(order.len());
    let mut chunks = Vec::new();
    let mut stats = Vec::with_capacity(order.len());
    for (idx, cve_id) in order.iter().enumerate() {
        let parent_id = format!("p{idx:05}");
        let sentences = grouped.remove(cve_id).expect("grouped by construction");
        let distances = sentence_distances(&sentences, embedder)?;
        let threshold = if distances.is_empty() {
            None
        } else {
            Some(percentile_linear(&distances, config.percentile)?)
        };
        let mut parent_chunks =
            split_at_percentile(&sentences, &distances, config, embedder, &parent_id)?;
        chunks.append(&mut parent_chunks);
        stats.push(ParentStats {
            parent_id: parent_id.clone(),
            distances,
            threshold,
        });
        parents.push(ParentDoc {
            parent_id,
            cve_id: cve_id.to_string(),
            full_text: sentences.concat(),
            sentences,
        });
    }

    Ok(ChunkRun {
        parents,
        chunks,
        stats,
    })
}

/// One row of the chunk report: a sentence, its distance to the next
/// sentence (none for a parent's last), the parent's threshold, and the
/// chunk that holds it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    /// Global sentence index across the whole corpus.
    pub sentence_index: usize,
    pub distance: Option<f64>,
    pub threshold: Option<f64>,
    pub chunk_id: String,
    pub parent_id: String,
}

/// Flattens a run into report rows, one per sentence, in corpus order.
pub fn chunk_report(run: &ChunkRun) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    let mut global = 0usize;
    for (parent, stats) in run.parents.iter().zip(&run.stats) {
        let parent_chunks: Vec<&Chunk> = run
            .chunks
            .iter()
            .filter(|c| c.parent_id == parent.parent_id)
            .collect();
        for i in 0..parent.sentences.len() {
            let chunk = parent_chunks
                .iter()
                .find(|c| c.sentence_span.0 <= i && i < c.sentence_span.1)
                .expect("spans partition the parent");
            rows.push(ReportRow {
                sentence_index: global,
                distance: stats.distances.get(i).copied(),
                threshold: stats.threshold,
                chunk_id: chunk.chunk_id.clone(),
                parent_id: parent.parent_id.clone(),
            });
            global += 1;
        }
    }
    rows
}

/// Renders report rows as CSV with a fixed header.
pub fn write_chunk_report(rows: &[ReportRow]) -> Result<String, ChunkError> {
    let csv_err = |detail: String| ChunkError::Report { detail };
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record([
            "sentence_index",
            "distance",
            "threshold",
            "chunk_id",
            "parent_id",
        ])
        .map_err(|e| csv_err(e.to_string()))?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for row in rows {
        writer
            .write_record([
                row.sentence_index.to_string(),
                fmt(row.distance),
                fmt(row.threshold),
                row.chunk_id.clone(),
                row.parent_id.clone(),
            ])
            .map_err(|e| csv_err(e.to_string()))?;
    }
    let bytes = writer.into_inner().map_err(|e| csv_err(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| csv_err(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::MergedRow;
    use crate::embed::{HashEmbedder, TableEmbedder};
    use proptest::prelude::*;

    fn corpus(rows: &[(&str, &str, &str)]) -> MergedCorpus {
        MergedCorpus {
            rows: rows
                .iter()
                .map(|(id, f, v)| MergedRow {
                    cve_id: id.to_string(),
                    field: f.to_string(),
                    value: v.to_string(),
                })
                .collect(),
        }
    }

    #[test]
    fn percentile_interpolates_between_order_statistics() {
        let sample = [0.1, 0.2, 0.9, 0.15];
        // Ascending: [0.1, 0.15, 0.2, 0.9]; rank 0.9·3 = 2.7 interpolates
        // 70% of the way from 0.2 to 0.9.
        let t = percentile_linear(&sample, 90.0).unwrap();
        assert!((t - 0.69).abs() < 1e-12, "got {t}");
        let single = percentile_linear(&[0.4], 90.0).unwrap();
        assert_eq!(single, 0.4);
        assert!(matches!(
            percentile_linear(&[], 50.0),
            Err(ChunkError::NoSample)
        ));
    }

    #[test]
    fn boundary_falls_only_above_the_threshold() {
        let sentences: Vec<String> = (0..5).map(|i| format!("row {i}\n")).collect();
        let distances = [0.1, 0.2, 0.9, 0.15];
        let embedder = HashEmbedder::new(32);
        let chunks = split_at_percentile(
            &sentences,
            &distances,
            &BreakpointConfig::default(),
            &embedder,
            "p00000",
        )
        .unwrap();
        // Threshold 0.69: only the 0.9 gap splits, after the third sentence.
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].sentence_span, (0, 3));
        assert_eq!(chunks[1].sentence_span, (3, 5));
        assert_eq!(chunks[0].chunk_id, "p00000-c000");
        assert_eq!(chunks[1].chunk_id, "p00000-c001");
        assert_eq!(
            chunks[0].text.to_string() + &chunks[1].text,
            sentences.concat()
        );
    }

    #[test]
    fn uniform_distances_never_split() {
        let sentences: Vec<String> = (0..4).map(|i| format!("s{i}\n")).collect();
        let embedder = HashEmbedder::new(32);
        let chunks = split_at_percentile(
            &sentences,
            &[0.5, 0.5, 0.5],
            &BreakpointConfig::default(),
            &embedder,
            "p00000",
        )
        .unwrap();
        // Every gap equals the threshold; strict comparison keeps one chunk.
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].sentence_span, (0, 4));
    }

    #[test]
    fn min_chunk_sentences_suppresses_early_boundaries() {
        let sentences: Vec<String> = (0..4).map(|i| format!("s{i}\n")).collect();
        let distances = [0.5, 0.9, 0.9];
        let embedder = HashEmbedder::new(32);
        let config = BreakpointConfig {
            percentile: 30.0,
            min_chunk_sentences: 2,
        };
        // Threshold 0.74; gaps after s1 and s2 qualify, but the second fires
        // on a 1-sentence chunk and is suppressed.
        let chunks =
            split_at_percentile(&sentences, &distances, &config, &embedder, "p00000").unwrap();
        let spans: Vec<_> = chunks.iter().map(|c| c.sentence_span).collect();
        assert_eq!(spans, [(0, 2), (2, 4)]);
    }

    #[test]
    fn distances_come_from_cosine_complements() {
        let mut table = TableEmbedder::new(2);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        table.insert("a", vec![1.0, 0.0]).unwrap();
        table.insert("b", vec![1.0, 0.0]).unwrap();
        table.insert("c", vec![0.0, 1.0]).unwrap();
        table.insert("d", vec![r, r]).unwrap();
        table.insert("e", vec![-1.0, 0.0]).unwrap();
        let sentences: Vec<String> = ["a", "b", "c", "d", "e"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let distances = sentence_distances(&sentences, &table).unwrap();
        let expected = [0.0, 1.0, 1.0 - r, 1.0 + r];
        for (got, want) in distances.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
        }
    }

    #[test]
    fn parents_group_by_first_appearance_and_merge_stragglers() {
        let corpus = corpus(&[
            ("CVE-2024-0002", "cve_id", "CVE-2024-0002"),
            ("CVE-2024-0001", "cve_id", "CVE-2024-0001"),
            (
                "CVE-2024-0002",
                "description",
                "late row of the first parent",
            ),
        ]);
        let run = chunk_corpus(
            &corpus,
            &BreakpointConfig::default(),
            &HashEmbedder::new(32),
        )
        .unwrap();
        assert_eq!(run.parents.len(), 2);
        assert_eq!(run.parents[0].parent_id, "p00000");
        assert_eq!(run.parents[0].cve_id, "CVE-2024-0002");
        assert_eq!(run.parents[0].sentences.len(), 2);
        assert_eq!(run.parents[1].parent_id, "p00001");
        assert_eq!(run.parents[1].cve_id, "CVE-2024-0001");
        // Single-sentence parent: no distances, no threshold.
        assert_eq!(run.stats[1].threshold, None);
        assert!(run.stats[1].distances.is_empty());
    }

    #[test]
    fn report_rows_track_sentences_and_chunks() {
        let corpus = corpus(&[
            ("CVE-2024-0001", "cve_id", "CVE-2024-0001"),
            ("CVE-2024-0001", "description", "a flaw"),
            ("CVE-2024-0002", "cve_id", "CVE-2024-0002"),
        ]);
        let run = chunk_corpus(
            &corpus,
            &BreakpointConfig::default(),
            &HashEmbedder::new(32),
        )
        .unwrap();
        let rows = chunk_report(&run);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].sentence_index, 0);
        assert!(rows[0].distance.is_some());
        assert!(rows[1].distance.is_none(), "last sentence of its parent");
        assert_eq!(rows[2].sentence_index, 2);
        assert_eq!(rows[2].parent_id, "p00001");
        assert_eq!(rows[2].threshold, None);

        let text = write_chunk_report(&rows).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "sentence_index,distance,threshold,chunk_id,parent_id"
        );
        assert!(text.lines().last().unwrap().starts_with("2,,,"));
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let result = chunk_corpus(
            &MergedCorpus::default(),
            &BreakpointConfig::default(),
            &HashEmbedder::new(32),
        );
        assert!(matches!(result, Err(ChunkError::EmptyCorpus)));
    }

    #[test]
    fn bad_percentile_is_rejected() {
        for p in [0.0, 100.0, -3.0] {
            let config = BreakpointConfig {
                percentile: p,
                min_chunk_sentences: 1,
            };
            assert!(config.validate().is_err(), "percentile {p} must fail");
        }
    }

    proptest! {
        #[test]
        fn chunking_is_lossless_and_spans_partition(
            rows in proptest::collection::vec(
                ("[a-c]", "[a-z]{1,8}", "[ a-z0-9]{0,20}"),
                1..20
            ),
            percentile in 1.0f64..99.0,
        ) {
            let corpus = MergedCorpus {
                rows: rows
                    .iter()
                    .map(|(id, f, v)| MergedRow {
                        cve_id: format!("CVE-2024-000{id}"),
                        field: f.clone(),
                        value: v.clone(),
                    })
                    .collect(),
            };
            let config = BreakpointConfig { percentile, min_chunk_sentences: 1 };
            let run = chunk_corpus(&corpus, &config, &HashEmbedder::new(16)).unwrap();
            for parent in &run.parents {
                let chunks: Vec<&Chunk> = run
                    .chunks
                    .iter()
                    .filter(|c| c.parent_id == parent.parent_id)
                    .collect();
                let compound: String =
                    chunks.iter().map(|c| c.text.as_str()).collect();
                prop_assert_eq!(&compound, &parent.full_text);
                let mut cursor = 0usize;
                for chunk in &chunks {
                    prop_assert_eq!(chunk.sentence_span.0, cursor);
                    prop_assert!(chunk.sentence_span.1 > chunk.sentence_span.0);
                    cursor = chunk.sentence_span.1;
                }
                prop_assert_eq!(cursor, parent.sentences.len());
            }
        }
    }
}
