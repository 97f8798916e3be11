//! Weighted reciprocal-rank fusion of lexical and dense rankings.

use std::collections::BTreeMap;

use super::{
    expand_query, rank_hits, Bm25Index, RankedHit, RetrieveError, SynonymTable, VectorIndex,
};
use crate::chunk::ParentDoc;
use crate::embed::Embedder;

/// Fusion weights and depth.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EnsembleConfig {
    pub weight_vector: f64,
    pub weight_bm25: f64,
    /// The `k` in `weight / (k + rank)`; dampens the gap between
    /// neighboring ranks.
    pub fusion_k: u32,
    pub top_k: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            weight_vector: 0.25,
            weight_bm25: 0.75,
            fusion_k: 60,
            top_k: 5,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<(), RetrieveError> {
        let bad = |detail: String| Err(RetrieveError::Config { detail });
        for (name, w) in [
            ("weight_vector", self.weight_vector),
            ("weight_bm25", self.weight_bm25),
        ] {
            if !w.is_finite() || w < 0.0 {
                return bad(format!("{name} must be finite and non-negative, got {w}"));
            }
        }
        if self.weight_vector + self.weight_bm25 <= 0.0 {
            return bad("at least one fusion weight must be positive".to_string());
        }
        if self.fusion_k == 0 {
            return bad("fusion_k must be at least 1".to_string());
        }
        if self.top_k == 0 {
            return bad("top_k must be at least 1".to_string());
        }
        Ok(())
    }
}

/// Fuses weighted rankings: each hit contributes
/// `weight / (fusion_k + rank)` to its chunk, and chunks are re-ranked by the
/// summed score. Returns the full fused ranking.
pub fn rrf_fuse(rankings: &[(f64, Vec<RankedHit>)], fusion_k: u32) -> Vec<RankedHit> {
    let mut fused: BTreeMap<&str, f64> = BTreeMap::new();
    for (weight, hits) in rankings {
        for hit in hits {
            *fused.entry(hit.chunk_id.as_str()).or_insert(0.0) +=
                weight / (fusion_k as f64 + hit.rank as f64);
        }
    }
    rank_hits(
        fused
            .into_iter()
            .map(|(chunk_id, score)| (chunk_id.to_string(), score))
            .collect(),
        None,
    )
}

/// Hybrid search: expands the query through the synonym table, takes the
/// full BM25 and cosine rankings for every subquery, fuses them all with
/// weighted RRF, and keeps the top `config.top_k`.
pub fn ensemble_search(
    query: &str,
    config: &EnsembleConfig,
    bm25: &Bm25Index,
    vectors: &VectorIndex,
    embedder: &dyn Embedder,
    synonyms: &SynonymTable,
) -> Result<Vec<RankedHit>, RetrieveError> {
    config.validate()?;
    if bm25.is_empty() && vectors.is_empty() {
        return Ok(Vec::new());
    }
    let mut rankings = Vec::new();
    for subquery in expand_query(query, synonyms) {
        rankings.push((config.weight_bm25, bm25.search(&subquery, None)));
        rankings.push((
            config.weight_vector,
            vectors.search(&subquery, embedder, None)?,
        ));
    }
    let mut fused = rrf_fuse(&rankings, config.fusion_k);
    fused.truncate(config.top_k);
    Ok(fused)
}

/// A parent document carrying the best score among its retrieved chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct ParentHit {
    pub parent: ParentDoc,
    pub score: f64,
}

/// Maps chunk hits up to their parent documents. Each parent keeps the best
/// score among its hit chunks; parents come back score-descending, id
/// ascending on ties.
pub fn resolve_parents(
    hits: &[RankedHit],
    chunk_parents: &BTreeMap<String, String>,
    parents: &BTreeMap<String, ParentDoc>,
) -> Result<Vec<ParentHit>, RetrieveError> {
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for hit in hits {
        let parent_id =
            chunk_parents
                .get(&hit.chunk_id)
                .ok_or_else(|| RetrieveError::Dangling {
                    chunk_id: hit.chunk_id.clone(),
                    parent_id: "<unmapped>".to_string(),
                })?;
        let entry = best.entry(parent_id).or_insert(f64::NEG_INFINITY);
        *entry = entry.max(hit.score);
    }
    let mut resolved = Vec::with_capacity(best.len());
    for (parent_id, score) in best {
        let parent = parents
            .get(parent_id)
            .ok_or_else(|| RetrieveError::Dangling {
                chunk_id: "<resolved>".to_string(),
                parent_id: parent_id.to_string(),
            })?;
        resolved.push(ParentHit {
            parent: parent.clone(),
            score,
        });
    }
    resolved.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("fused scores are finite")
            .then_with(|| a.parent.parent_id.cmp(&b.parent.parent_id))
    });
    Ok(resolved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{Embedding, TableEmbedder};
    use crate::retrieve::Bm25Params;

    fn hits(ids: &[&str]) -> Vec<RankedHit> {
        ids.iter()
            .enumerate()
            .map(|(i, id)| RankedHit {
                chunk_id: id.to_string(),
                score: 1.0 / (i + 1) as f64,
                rank: i + 1,
            })
            .collect()
    }

    #[test]
    fn first_rank_in_both_lists_gets_the_full_weight_sum() {
        let rankings = vec![(0.75, hits(&["a", "b"])), (0.25, hits(&["a", "c"]))];
        let fused = rrf_fuse(&rankings, 60);
        assert_eq!(fused[0].chunk_id, "a");
        // (0.75 + 0.25) / (60 + 1)
        assert!((fused[0].score - 1.0 / 61.0).abs() < 1e-12);
        // b and c both sit at rank 2 of one list; id breaks the tie.
        assert_eq!(fused[1].chunk_id, "b");
        assert!((fused[1].score - 0.75 / 62.0).abs() < 1e-12);
        assert_eq!(fused[2].chunk_id, "c");
    }

    #[test]
    fn zero_weight_degenerates_to_the_other_ranking() {
        let bm25_order = hits(&["x", "y", "z"]);
        let vector_order = hits(&["z", "y", "x"]);
        let only_bm25 = rrf_fuse(
            &[(1.0, bm25_order.clone()), (0.0, vector_order.clone())],
            60,
        );
        let ids: Vec<&str> = only_bm25.iter().map(|h| h.chunk_id.as_str()).collect();
        assert_eq!(ids, ["x", "y", "z"]);

        let only_vector = rrf_fuse(&[(0.0, bm25_order), (1.0, vector_order)], 60);
        let ids: Vec<&str> = only_vector.iter().map(|h| h.chunk_id.as_str()).collect();
        assert_eq!(ids, ["z", "y", "x"]);
    }

    fn toy_indexes() -> (Bm25Index, VectorIndex, TableEmbedder) {
        let bm25 = Bm25Index::build(
            [
                ("c1", "heap overflow in the parser"),
                ("c2", "sql injection in the login form"),
                ("c3", "use after free in the renderer"),
            ],
            Bm25Params::default(),
        )
        .unwrap();
        let unit = |v: Vec<f64>| Embedding::from_unnormalized(v).unwrap();
        let vectors = VectorIndex::build(vec![
            ("c1".to_string(), unit(vec![1.0, 0.0])),
            ("c2".to_string(), unit(vec![0.0, 1.0])),
            ("c3".to_string(), unit(vec![1.0, 1.0])),
        ])
        .unwrap();
        let mut embedder = TableEmbedder::new(2);
        embedder
            .insert("sql injection in login", vec![0.0, 1.0])
            .unwrap();
        (bm25, vectors, embedder)
    }

    #[test]
    fn agreement_between_retrievers_wins() {
        let (bm25, vectors, embedder) = toy_indexes();
        let fused = ensemble_search(
            "sql injection in login",
            &EnsembleConfig::default(),
            &bm25,
            &vectors,
            &embedder,
            &SynonymTable::empty(),
        )
        .unwrap();
        assert_eq!(fused[0].chunk_id, "c2");
        // Rank 1 in both retrievers.
        assert!((fused[0].score - 1.0 / 61.0).abs() < 1e-12);
    }

    #[test]
    fn empty_indexes_return_no_hits() {
        let bm25 = Bm25Index::build([], Bm25Params::default()).unwrap();
        let vectors = VectorIndex::build(Vec::new()).unwrap();
        let embedder = crate::embed::HashEmbedder::new(2);
        let fused = ensemble_search(
            "anything",
            &EnsembleConfig::default(),
            &bm25,
            &vectors,
            &embedder,
            &SynonymTable::empty(),
        )
        .unwrap();
        assert!(fused.is_empty());
    }

    #[test]
    fn invalid_weights_are_rejected() {
        let bad = EnsembleConfig {
            weight_vector: 0.0,
            weight_bm25: 0.0,
            ..EnsembleConfig::default()
        };
        assert!(bad.validate().is_err());
        let negative = EnsembleConfig {
            weight_vector: -0.1,
            ..EnsembleConfig::default()
        };
        assert!(negative.validate().is_err());
    }

    fn parent(parent_id: &str) -> ParentDoc {
        ParentDoc {
            parent_id: parent_id.to_string(),
            cve_id: format!("CVE-2024-{parent_id}"),
            sentences: vec!["s\n".to_string()],
            full_text: "s\n".to_string(),
        }
    }

    #[test]
    fn parents_keep_their_best_chunk_score() {
        let chunk_parents: BTreeMap<String, String> = [
            ("p1-c000".to_string(), "p1".to_string()),
            ("p1-c001".to_string(), "p1".to_string()),
            ("p2-c000".to_string(), "p2".to_string()),
        ]
        .into();
        let parents: BTreeMap<String, ParentDoc> = [
            ("p1".to_string(), parent("p1")),
            ("p2".to_string(), parent("p2")),
        ]
        .into();
        let hits = vec![
            RankedHit {
                chunk_id: "p1-c001".to_string(),
                score: 0.4,
                rank: 1,
            },
            RankedHit {
                chunk_id: "p2-c000".to_string(),
                score: 0.3,
                rank: 2,
            },
            RankedHit {
                chunk_id: "p1-c000".to_string(),
                score: 0.1,
                rank: 3,
            },
        ];
        let resolved = resolve_parents(&hits, &chunk_parents, &parents).unwrap();
        assert_eq!(resolved.len(), 2);
        assert_eq!(resolved[0].parent.parent_id, "p1");
        assert_eq!(resolved[0].score, 0.4);
        assert_eq!(resolved[1].parent.parent_id, "p2");
    }

    #[test]
    fn unmapped_chunks_are_dangling() {
        let hits = vec![RankedHit {
            chunk_id: "ghost".to_string(),
            score: 1.0,
            rank: 1,
        }];
        let result = resolve_parents(&hits, &BTreeMap::new(), &BTreeMap::new());
        assert!(matches!(result, Err(RetrieveError::Dangling { .. })));
    }
}
