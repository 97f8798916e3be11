//! Okapi BM25 scoring over tokenized chunks.

use std::collections::BTreeMap;

use super::{rank_hits, tokenize, RankedHit, RetrieveError};

/// BM25 shape parameters: `k1` controls term-frequency saturation, `b` the
/// strength of document-length normalization.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.5, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), RetrieveError> {
        if !(1.2..=2.0).contains(&self.k1) {
            return Err(RetrieveError::Config {
                detail: format!("k1 must be in [1.2, 2.0], got {}", self.k1),
            });
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(RetrieveError::Config {
                detail: format!("b must be in [0, 1], got {}", self.b),
            });
        }
        Ok(())
    }
}

/// Inverted index with per-chunk lengths.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    doc_len: BTreeMap<String, usize>,
    avg_len: f64,
    /// term → chunk id → term frequency.
    postings: BTreeMap<String, BTreeMap<String, usize>>,
}

impl Bm25Index {
    /// Indexes `(chunk_id, text)` pairs. An empty corpus is a valid index
    /// that matches nothing.
    pub fn build<'a, I>(docs: I, params: Bm25Params) -> Result<Self, RetrieveError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        params.validate()?;
        let mut doc_len = BTreeMap::new();
        let mut postings: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for (chunk_id, text) in docs {
            let tokens = tokenize(text);
            if doc_len.insert(chunk_id.to_string(), tokens.len()).is_some() {
                return Err(RetrieveError::DuplicateChunk {
                    chunk_id: chunk_id.to_string(),
                });
            }
            for token in tokens {
                *postings
                    .entry(token)
                    .or_default()
                    .entry(chunk_id.to_string())
                    .or_insert(0) += 1;
            }
        }
        let avg_len = if doc_len.is_empty() {
            0.0
        } else {
            doc_len.values().sum::<usize>() as f64 / doc_len.len() as f64
        };
        Ok(Bm25Index {
            params,
            doc_len,
            avg_len,
            postings,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_len.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_len.is_empty()
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    /// Inverse document frequency,
    /// `ln((N − n + 0.5) / (n + 0.5) + 1)`, where `n` counts chunks
    /// containing `term`. Always positive; unseen terms score highest.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.postings.get(term).map_or(0, BTreeMap::len) as f64;
        let big_n = self.doc_len.len() as f64;
        ((big_n - n + 0.5) / (n + 0.5) + 1.0).ln()
    }

    /// BM25 score of one chunk against pre-tokenized query terms. Repeated
    /// query terms contribute once per occurrence.
    pub fn score(&self, query_tokens: &[String], chunk_id: &str) -> Result<f64, RetrieveError> {
        let len = *self
            .doc_len
            .get(chunk_id)
            .ok_or_else(|| RetrieveError::UnknownChunk {
                chunk_id: chunk_id.to_string(),
            })?;
        let Bm25Params { k1, b } = self.params;
        // Degenerate all-empty corpus: fall back to no length normalization.
        let length_factor = if self.avg_len == 0.0 {
            1.0
        } else {
            1.0 - b + b * len as f64 / self.avg_len
        };
        let mut total = 0.0;
        for token in query_tokens {
            let tf = self
                .postings
                .get(token)
                .and_then(|chunks| chunks.get(chunk_id))
                .copied()
                .unwrap_or(0) as f64;
            if tf > 0.0 {
                total += self.idf(token) * tf * (k1 + 1.0) / (tf + k1 * length_factor);
            }
        }
        Ok(total)
    }

    /// Scores the whole index against `query` and returns a total ranking —
    /// chunks matching nothing still appear, with score zero, ordered by id.
    pub fn search(&self, query: &str, k: Option<usize>) -> Vec<RankedHit> {
        let tokens = tokenize(query);
        let scored = self
            .doc_len
            .keys()
            .map(|chunk_id| {
                let score = self
                    .score(&tokens, chunk_id)
                    .expect("scoring an indexed chunk");
                (chunk_id.clone(), score)
            })
            .collect();
        rank_hits(scored, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN_2: f64 = 0.693_147_180_559_945_3;

    fn two_doc_index() -> Bm25Index {
        Bm25Index::build(
            [("d1", "cve buffer overflow"), ("d2", "cve sql injection")],
            Bm25Params::default(),
        )
        .unwrap()
    }

    #[test]
    fn idf_matches_hand_values() {
        let index = two_doc_index();
        // N=2, n=1: ln((2 − 1 + 0.5)/(1 + 0.5) + 1) = ln 2.
        assert!((index.idf("overflow") - LN_2).abs() < 1e-12);
        // Unseen term, n=0: ln(2.5/0.5 + 1) = ln 6.
        assert!((index.idf("ghost") - 6.0f64.ln()).abs() < 1e-12);

        let single = Bm25Index::build([("d1", "word")], Bm25Params::default()).unwrap();
        // N=1, n=1: ln(0.5/1.5 + 1) = ln(4/3).
        assert!((single.idf("word") - 0.287_682_072_451_780_9).abs() < 1e-12);
    }

    #[test]
    fn score_matches_hand_computation() {
        let index = two_doc_index();
        // Both docs have 3 tokens, so the length factor is exactly 1 and the
        // tf factor is 1·2.5/(1 + 1.5) = 1, leaving just the idf.
        let score = index.score(&["overflow".to_string()], "d1").unwrap();
        assert!((score - LN_2).abs() < 1e-6, "got {score}");
        assert_eq!(index.score(&["overflow".to_string()], "d2").unwrap(), 0.0);
    }

    #[test]
    fn rarer_terms_weigh_more() {
        let index = Bm25Index::build(
            [
                ("d1", "alpha beta"),
                ("d2", "alpha gamma"),
                ("d3", "alpha beta"),
            ],
            Bm25Params::default(),
        )
        .unwrap();
        assert!(index.idf("gamma") > index.idf("beta"));
        assert!(index.idf("beta") > index.idf("alpha"));
    }

    #[test]
    fn equal_tf_in_longer_doc_scores_lower() {
        let index = Bm25Index::build(
            [
                ("short", "crash now"),
                ("long", "crash with many extra trailing words here"),
            ],
            Bm25Params::default(),
        )
        .unwrap();
        let q = vec!["crash".to_string()];
        assert!(index.score(&q, "short").unwrap() > index.score(&q, "long").unwrap());
    }

    #[test]
    fn term_frequency_saturates() {
        let index = Bm25Index::build(
            [("twice", "crash crash pad"), ("once", "crash other pad")],
            Bm25Params::default(),
        )
        .unwrap();
        let q = vec!["crash".to_string()];
        let twice = index.score(&q, "twice").unwrap();
        let once = index.score(&q, "once").unwrap();
        assert!(twice > once);
        assert!(twice < 2.0 * once, "tf gains must be sublinear");
    }

    #[test]
    fn repeated_query_terms_count_each_time() {
        let index = two_doc_index();
        let once = index.score(&["overflow".to_string()], "d1").unwrap();
        let twice = index
            .score(&["overflow".to_string(), "overflow".to_string()], "d1")
            .unwrap();
        assert!((twice - 2.0 * once).abs() < 1e-12);
    }

    #[test]
    fn search_ranks_every_chunk() {
        let index = two_doc_index();
        let hits = index.search("no such words anywhere", None);
        assert_eq!(hits.len(), 2);
        assert!(hits.iter().all(|h| h.score == 0.0));
        // Zero scores fall back to id order.
        assert_eq!(hits[0].chunk_id, "d1");
        assert_eq!(hits[1].chunk_id, "d2");
        assert_eq!(hits[1].rank, 2);

        let top = index.search("sql injection", Some(1));
        assert_eq!(top.len(), 1);
        assert_eq!(top[0].chunk_id, "d2");
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let result = Bm25Index::build([("d1", "a"), ("d1", "b")], Bm25Params::default());
        assert!(matches!(result, Err(RetrieveError::DuplicateChunk { .. })));
    }

    #[test]
    fn unknown_chunk_is_an_error() {
        let index = two_doc_index();
        assert!(matches!(
            index.score(&[], "ghost"),
            Err(RetrieveError::UnknownChunk { .. })
        ));
    }

    #[test]
    fn empty_index_is_usable() {
        let index = Bm25Index::build([], Bm25Params::default()).unwrap();
        assert!(index.is_empty());
        assert!(index.search("anything", Some(5)).is_empty());
    }

    #[test]
    fn out_of_range_params_are_rejected() {
        for (k1, b) in [(1.0, 0.75), (2.5, 0.75), (1.5, -0.1), (1.5, 1.5)] {
            let result = Bm25Index::build([("d", "x")], Bm25Params { k1, b });
            assert!(
                matches!(result, Err(RetrieveError::Config { .. })),
                "{k1}/{b}"
            );
        }
    }
}
