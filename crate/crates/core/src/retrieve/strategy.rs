//! Search strategies behind one trait, so the caller picks the algorithm by
//! name at runtime.

use super::{
    ensemble_search, Bm25Index, EnsembleConfig, RankedHit, RetrieveError, SynonymTable, VectorIndex,
};
use crate::embed::Embedder;

/// A named way of turning a query into ranked chunks.
pub trait SearchStrategy {
    fn name(&self) -> &'static str;
    fn search(&self, query: &str, k: usize) -> Result<Vec<RankedHit>, RetrieveError>;
}

/// Lexical-only search.
pub struct Bm25Strategy<'a> {
    pub index: &'a Bm25Index,
}

impl SearchStrategy for Bm25Strategy<'_> {
    fn name(&self) -> &'static str {
        "bm25"
    }

    fn search(&self, query: &str, k: usize) -> Result<Vec<RankedHit>, RetrieveError> {
        Ok(self.index.search(query, Some(k)))
    }
}

/// Dense-only search.
pub struct VectorStrategy<'a> {
    pub index: &'a VectorIndex,
    pub embedder: &'a dyn Embedder,
}

impl SearchStrategy for VectorStrategy<'_> {
    fn name(&self) -> &'static str {
        "vector"
    }

    fn search(&self, query: &str, k: usize) -> Result<Vec<RankedHit>, RetrieveError> {
        self.index.search(query, self.embedder, Some(k))
    }
}

/// Weighted fusion of both retrievers over synonym-expanded subqueries.
pub struct EnsembleStrategy<'a> {
    pub bm25: &'a Bm25Index,
    pub vectors: &'a VectorIndex,
    pub embedder: &'a dyn Embedder,
    pub synonyms: &'a SynonymTable,
    pub config: EnsembleConfig,
}

impl SearchStrategy for EnsembleStrategy<'_> {
    fn name(&self) -> &'static str {
        "ensemble"
    }

    fn search(&self, query: &str, k: usize) -> Result<Vec<RankedHit>, RetrieveError> {
        let config = EnsembleConfig {
            top_k: k,
            ..self.config
        };
        ensemble_search(
            query,
            &config,
            self.bm25,
            self.vectors,
            self.embedder,
            self.synonyms,
        )
    }
}
