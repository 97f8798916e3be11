//! Dense retrieval: cosine similarity between the query embedding and chunk
//! embeddings.

use super::{rank_hits, RankedHit, RetrieveError};
use crate::embed::{cosine, EmbedError, Embedder, Embedding};

/// Flat store of chunk embeddings, scanned exhaustively at query time.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    entries: Vec<(String, Embedding)>,
    dim: Option<usize>,
}

impl VectorIndex {
    pub fn build(mut entries: Vec<(String, Embedding)>) -> Result<Self, RetrieveError> {
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let mut dim = None;
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(RetrieveError::DuplicateChunk {
                    chunk_id: pair[0].0.clone(),
                });
            }
        }
        for (_, embedding) in &entries {
            match dim {
                None => dim = Some(embedding.dim()),
                Some(d) if d != embedding.dim() => {
                    return Err(RetrieveError::Embed(EmbedError::DimensionMismatch {
                        left: d,
                        right: embedding.dim(),
                    }))
                }
                Some(_) => {}
            }
        }
        Ok(VectorIndex { entries, dim })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    /// Total ranking by cosine similarity to a prepared query embedding.
    pub fn search_embedding(
        &self,
        query: &Embedding,
        k: Option<usize>,
    ) -> Result<Vec<RankedHit>, RetrieveError> {
        let scored = self
            .entries
            .iter()
            .map(|(chunk_id, embedding)| Ok((chunk_id.clone(), cosine(query, embedding)?)))
            .collect::<Result<Vec<_>, EmbedError>>()?;
        Ok(rank_hits(scored, k))
    }

    /// Embeds `query` and ranks all chunks. A query the embedder cannot
    /// represent (no tokens at all) matches nothing rather than failing.
    pub fn search(
        &self,
        query: &str,
        embedder: &dyn Embedder,
        k: Option<usize>,
    ) -> Result<Vec<RankedHit>, RetrieveError> {
        if self.entries.is_empty() {
            return Ok(Vec::new());
        }
        match embedder.embed(query) {
            Ok(embedding) => self.search_embedding(&embedding, k),
            Err(EmbedError::EmptyInput) => Ok(Vec::new()),
            Err(e) => Err(e.into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::TableEmbedder;

    fn embedding(values: Vec<f64>) -> Embedding {
        Embedding::from_unnormalized(values).unwrap()
    }

    fn three_chunk_index() -> VectorIndex {
        VectorIndex::build(vec![
            ("c1".to_string(), embedding(vec![1.0, 0.0])),
            ("c2".to_string(), embedding(vec![0.0, 1.0])),
            ("c3".to_string(), embedding(vec![1.0, 1.0])),
        ])
        .unwrap()
    }

    #[test]
    fn ranks_by_cosine_similarity() {
        let index = three_chunk_index();
        let hits = index
            .search_embedding(&embedding(vec![1.0, 0.0]), None)
            .unwrap();
        let order: Vec<&str> = hits.iter().map(|h| h.chunk_id.as_str()).collect();
        assert_eq!(order, ["c1", "c3", "c2"]);
        assert!((hits[0].score - 1.0).abs() < 1e-12);
        assert!((hits[1].score - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(hits[2].score.abs() < 1e-12);
    }

    #[test]
    fn equal_scores_fall_back_to_id_order() {
        let index = VectorIndex::build(vec![
            ("b".to_string(), embedding(vec![1.0, 0.0])),
            ("a".to_string(), embedding(vec![1.0, 0.0])),
        ])
        .unwrap();
        let hits = index
            .search_embedding(&embedding(vec![1.0, 0.0]), None)
            .unwrap();
        assert_eq!(hits[0].chunk_id, "a");
        assert_eq!(hits[1].chunk_id, "b");
    }

    #[test]
    fn search_goes_through_an_embedder() {
        let mut table = TableEmbedder::new(2);
        table.insert("attack", vec![0.0, 1.0]).unwrap();
        let index = three_chunk_index();
        let hits = index.search("attack", &table, Some(1)).unwrap();
        assert_eq!(hits[0].chunk_id, "c2");
    }

    #[test]
    fn tokenless_query_matches_nothing() {
        let index = three_chunk_index();
        let embedder = crate::embed::HashEmbedder::new(2);
        assert!(index.search("?!", &embedder, Some(3)).unwrap().is_empty());
    }

    #[test]
    fn duplicate_and_mismatched_entries_are_rejected() {
        let dup = VectorIndex::build(vec![
            ("c1".to_string(), embedding(vec![1.0, 0.0])),
            ("c1".to_string(), embedding(vec![0.0, 1.0])),
        ]);
        assert!(matches!(dup, Err(RetrieveError::DuplicateChunk { .. })));

        let mixed = VectorIndex::build(vec![
            ("c1".to_string(), embedding(vec![1.0, 0.0])),
            ("c2".to_string(), embedding(vec![1.0, 0.0, 0.0])),
        ]);
        assert!(matches!(mixed, Err(RetrieveError::Embed(_))));
    }

    #[test]
    fn query_dimension_must_match() {
        let index = three_chunk_index();
        let result = index.search_embedding(&embedding(vec![1.0, 0.0, 0.0]), None);
        assert!(matches!(result, Err(RetrieveError::Embed(_))));
    }
}
