//! Index persistence: one JSONL file holding a meta header, parent
//! documents, and chunks. The lexical and dense indexes are rebuilt from the
//! chunks on load, so the file stays small and the in-memory index
//! structures never need a serialized form.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Bm25Index, Bm25Params, RetrieveError, VectorIndex};
use crate::chunk::{Chunk, ParentDoc};

pub const INDEX_MAGIC: &str = "cve-hybrid-index";
pub const INDEX_VERSION: u32 = 1;

/// First line of the index file. `magic`/`version` gate loading; the rest
/// records how the index was built so query time can check consistency
/// (embedder, dimension) and rebuild scoring (BM25 parameters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexMeta {
    pub magic: String,
    pub version: u32,
    pub embedder: String,
    pub dim: usize,
    pub k1: f64,
    pub b: f64,
    pub percentile: f64,
    pub chunk_count: usize,
    pub parent_count: usize,
}

#[derive(Serialize)]
enum IndexLineRef<'a> {
    #[serde(rename = "parent")]
    Parent(&'a ParentDoc),
    #[serde(rename = "chunk")]
    Chunk(&'a Chunk),
}

#[derive(Deserialize)]
enum IndexLine {
    #[serde(rename = "parent")]
    Parent(ParentDoc),
    #[serde(rename = "chunk")]
    Chunk(Chunk),
}

/// Everything query time needs, kept consistent by construction: the corpus
/// documents, their chunks, and both retrieval indexes over those chunks.
pub struct IndexBundle {
    pub meta: IndexMeta,
    pub parents: Vec<ParentDoc>,
    pub chunks: Vec<Chunk>,
    pub bm25: Bm25Index,
    pub vectors: VectorIndex,
}

impl IndexBundle {
    pub fn build(
        parents: Vec<ParentDoc>,
        chunks: Vec<Chunk>,
        embedder_name: &str,
        dim: usize,
        params: Bm25Params,
        percentile: f64,
    ) -> Result<Self, RetrieveError> {
        let bm25 = Bm25Index::build(
            chunks
                .iter()
                .map(|c| (c.chunk_id.as_str(), c.text.as_str())),
            params,
        )?;
        let vectors = VectorIndex::build(
            chunks
                .iter()
                .map(|c| (c.chunk_id.clone(), c.embedding.clone()))
                .collect(),
        )?;
        let meta = IndexMeta {
            magic: INDEX_MAGIC.to_string(),
            version: INDEX_VERSION,
            embedder: embedder_name.to_string(),
            dim,
            k1: params.k1,
            b: params.b,
            percentile,
            chunk_count: chunks.len(),
            parent_count: parents.len(),
        };
        Ok(IndexBundle {
            meta,
            parents,
            chunks,
            bm25,
            vectors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrieveError> {
        let mut out = serde_json::to_string(&self.meta).expect("meta serializes");
        out.push('\n');
        for parent in &self.parents {
            out.push_str(
                &serde_json::to_string(&IndexLineRef::Parent(parent)).expect("parent serializes"),
            );
            out.push('\n');
        }
        for chunk in &self.chunks {
            out.push_str(
                &serde_json::to_string(&IndexLineRef::Chunk(chunk)).expect("chunk serializes"),
            );
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|source| RetrieveError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, RetrieveError> {
        let text = std::fs::read_to_string(path).map_err(|source| RetrieveError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let format = |detail: String| RetrieveError::Format { detail };

        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let meta_line = lines
            .next()
            .ok_or_else(|| format("empty index file".to_string()))?;
        let meta: IndexMeta = serde_json::from_str(meta_line)
            .map_err(|e| format(format!("unreadable meta line: {e}")))?;
        if meta.magic != INDEX_MAGIC {
            return Err(format(format!(
                "not an index file (magic {:?}, want {INDEX_MAGIC:?})",
                meta.magic
            )));
        }
        if meta.version != INDEX_VERSION {
            return Err(format(format!(
                "unsupported index version {} (supported: {INDEX_VERSION})",
                meta.version
            )));
        }

        let mut parents = Vec::new();
        let mut chunks = Vec::new();
        for (i, line) in lines.enumerate() {
            let parsed: IndexLine = serde_json::from_str(line)
                .map_err(|e| format(format!("unreadable entry on line {}: {e}", i + 2)))?;
            match parsed {
                IndexLine::Parent(p) => parents.push(p),
                IndexLine::Chunk(c) => chunks.push(c),
            }
        }
        if parents.len() != meta.parent_count || chunks.len() != meta.chunk_count {
            return Err(format(format!(
                "meta promises {} parents / {} chunks, file holds {} / {}",
                meta.parent_count,
                meta.chunk_count,
                parents.len(),
                chunks.len()
            )));
        }

        let params = Bm25Params {
            k1: meta.k1,
            b: meta.b,
        };
        let rebuilt = IndexBundle::build(
            parents,
            chunks,
            &meta.embedder,
            meta.dim,
            params,
            meta.percentile,
        )?;
        Ok(IndexBundle { meta, ..rebuilt })
    }

    /// chunk id → parent id for every chunk in the bundle.
    pub fn chunk_parents(&self) -> BTreeMap<String, String> {
        self.chunks
            .iter()
            .map(|c| (c.chunk_id.clone(), c.parent_id.clone()))
            .collect()
    }

    /// parent id → parent document.
    pub fn parents_by_id(&self) -> BTreeMap<String, ParentDoc> {
        self.parents
            .iter()
            .map(|p| (p.parent_id.clone(), p.clone()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunk::{chunk_corpus, BreakpointConfig};
    use crate::corpus::{MergedCorpus, MergedRow};
    use crate::embed::HashEmbedder;

    fn toy_bundle() -> IndexBundle {
        let corpus = MergedCorpus {
            rows: vec![
                MergedRow {
                    cve_id: "CVE-2024-0001".to_string(),
                    field: "cve_id".to_string(),
                    value: "CVE-2024-0001".to_string(),
                },
                MergedRow {
                    cve_id: "CVE-2024-0001".to_string(),
                    field: "description".to_string(),
                    value: "heap overflow in the parser".to_string(),
                },
                MergedRow {
                    cve_id: "CVE-2024-0002".to_string(),
                    field: "cve_id".to_string(),
                    value: "CVE-2024-0002".to_string(),
                },
            ],
        };
        let embedder = HashEmbedder::new(16);
        let run = chunk_corpus(&corpus, &BreakpointConfig::default(), &embedder).unwrap();
        IndexBundle::build(
            run.parents,
            run.chunks,
            "hash",
            16,
            Bm25Params::default(),
            90.0,
        )
        .unwrap()
    }

    #[test]
    fn survives_a_save_load_cycle() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.jsonl");
        let bundle = toy_bundle();
        bundle.save(&path).unwrap();

        let loaded = IndexBundle::load(&path).unwrap();
        assert_eq!(loaded.meta, bundle.meta);
        assert_eq!(loaded.parents, bundle.parents);
        assert_eq!(loaded.chunks, bundle.chunks);
        assert_eq!(
            loaded.bm25.search("heap overflow", Some(3)),
            bundle.bm25.search("heap overflow", Some(3)),
        );
        assert_eq!(loaded.chunk_parents(), bundle.chunk_parents());

        // Saving again produces the same bytes.
        let first = std::fs::read(&path).unwrap();
        loaded.save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn wrong_magic_or_version_refuses_to_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.jsonl");
        let bundle = toy_bundle();

        let mut meta = bundle.meta.clone();
        meta.magic = "something-else".to_string();
        std::fs::write(&path, serde_json::to_string(&meta).unwrap() + "\n").unwrap();
        assert!(matches!(
            IndexBundle::load(&path),
            Err(RetrieveError::Format { .. })
        ));

        let mut meta = bundle.meta.clone();
        meta.version = 999;
        std::fs::write(&path, serde_json::to_string(&meta).unwrap() + "\n").unwrap();
        assert!(matches!(
            IndexBundle::load(&path),
            Err(RetrieveError::Format { .. })
        ));
    }

    #[test]
    fn truncated_files_fail_the_count_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.jsonl");
        toy_bundle().save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.pop();
        std::fs::write(&path, lines.join("\n")).unwrap();
        assert!(matches!(
            IndexBundle::load(&path),
            Err(RetrieveError::Format { .. })
        ));
    }

    #[test]
    fn garbage_is_not_an_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.jsonl");
        std::fs::write(&path, "not json at all\n").unwrap();
        assert!(matches!(
            IndexBundle::load(&path),
            Err(RetrieveError::Format { .. })
        ));
        std::fs::write(&path, "").unwrap();
        assert!(matches!(
            IndexBundle::load(&path),
            Err(RetrieveError::Format { .. })
        ));
    }
}
