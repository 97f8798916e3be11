//! Hybrid retrieval over chunked CVE documents.
//!
//! Three interchangeable strategies share one tokenizer and hit shape:
//! lexical Okapi BM25, dense cosine search over chunk embeddings, and their
//! weighted reciprocal-rank fusion (with synonym-expanded subqueries). The
//! tokenizer keeps CVE identifiers whole so an exact id in the query stays a
//! single, highly selective term.

mod bm25;
mod fusion;
mod persist;
mod strategy;
mod synonym;
mod vector;

pub use bm25::{Bm25Index, Bm25Params};
pub use fusion::{ensemble_search, resolve_parents, rrf_fuse, EnsembleConfig, ParentHit};
pub use persist::{IndexBundle, IndexMeta, INDEX_MAGIC, INDEX_VERSION};
pub use strategy::{Bm25Strategy, EnsembleStrategy, SearchStrategy, VectorStrategy};
pub use synonym::{expand_query, SynonymTable};
pub use vector::VectorIndex;

use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::embed::EmbedError;

#[derive(Debug, Error)]
pub enum RetrieveError {
    #[error("invalid retrieval config: {detail}")]
    Config { detail: String },
    #[error("chunk id {chunk_id} appears twice in the index")]
    DuplicateChunk { chunk_id: String },
    #[error("chunk id {chunk_id} is not in the index")]
    UnknownChunk { chunk_id: String },
    #[error("chunk {chunk_id} points at missing parent {parent_id}")]
    Dangling { chunk_id: String, parent_id: String },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("synonym table line {line}: {detail}")]
    Synonyms { line: usize, detail: String },
    #[error("index file format error: {detail}")]
    Format { detail: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

static CVE_TOKEN: OnceLock<Regex> = OnceLock::new();

pub(crate) fn cve_token_regex() -> &'static Regex {
    CVE_TOKEN.get_or_init(|| Regex::new(r"(?i)\bCVE-\d{4}-\d+\b").expect("hardcoded regex"))
}

/// Lowercases and splits on non-alphanumerics, except that CVE identifiers
/// survive as single tokens (`"CVE-2024-21302"` → `"cve-2024-21302"`).
pub fn tokenize(text: &str) -> Vec<String> {
    fn split_plain(segment: &str, out: &mut Vec<String>) {
        for token in segment.split(|c: char| !c.is_alphanumeric()) {
            if !token.is_empty() {
                out.push(token.to_lowercase());
            }
        }
    }

    let mut tokens = Vec::new();
    let mut cursor = 0usize;
    for m in cve_token_regex().find_iter(text) {
        split_plain(&text[cursor..m.start()], &mut tokens);
        tokens.push(m.as_str().to_lowercase());
        cursor = m.end();
    }
    split_plain(&text[cursor..], &mut tokens);
    tokens
}

/// A chunk with its retrieval score; `rank` is 1-based within one result
/// list.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RankedHit {
    pub chunk_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Orders scored chunks (score descending, chunk id ascending on ties),
/// optionally truncates to `k`, and assigns ranks.
pub fn rank_hits(mut scored: Vec<(String, f64)>, k: Option<usize>) -> Vec<RankedHit> {
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("retrieval scores are finite")
            .then_with(|| a.0.cmp(&b.0))
    });
    if let Some(k) = k {
        scored.truncate(k);
    }
    scored
        .into_iter()
        .enumerate()
        .map(|(i, (chunk_id, score))| RankedHit {
            chunk_id,
            score,
            rank: i + 1,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cve_ids_stay_whole_and_lowercase() {
        assert_eq!(
            tokenize("Buffer overflow; see CVE-2024-21302!"),
            ["buffer", "overflow", "see", "cve-2024-21302"]
        );
        assert_eq!(tokenize("cve-2023-4863"), ["cve-2023-4863"]);
    }

    #[test]
    fn near_miss_ids_split_normally() {
        // No word boundary before the C / after the digits, so the id
        // pattern must not fire.
        assert_eq!(tokenize("XCVE-2024-1"), ["xcve", "2024", "1"]);
        assert_eq!(tokenize("CVE-2024-0001x"), ["cve", "2024", "0001x"]);
        assert_eq!(tokenize("CVE-24-1"), ["cve", "24", "1"]);
    }

    #[test]
    fn punctuation_and_case_fold_away() {
        assert_eq!(
            tokenize("SQL-Injection (v3.1), remote!"),
            ["sql", "injection", "v3", "1", "remote"]
        );
        assert!(tokenize("  ,,  ").is_empty());
    }

    #[test]
    fn ranking_breaks_ties_lexicographically() {
        let hits = rank_hits(
            vec![
                ("c".to_string(), 1.0),
                ("a".to_string(), 1.0),
                ("b".to_string(), 2.0),
            ],
            None,
        );
        let order: Vec<&str> = hits.iter().map(|h| h.chunk_id.as_str()).collect();
        assert_eq!(order, ["b", "a", "c"]);
        assert_eq!(hits[0].rank, 1);
        assert_eq!(hits[2].rank, 3);

        let top = rank_hits(
            vec![("a".to_string(), 0.0), ("b".to_string(), 3.0)],
            Some(1),
        );
        assert_eq!(top.len(), 1);
        assert_eq!(top[0].chunk_id, "b");
    }
}
