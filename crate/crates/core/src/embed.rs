//! Text embedding providers and dense-vector helpers.
//!
//! The default provider is [`HashEmbedder`], a deterministic local
//! feature-hashing embedder (FNV-1a over lowercased alphanumeric tokens,
//! bag-of-tokens, L2-normalized), which keeps the whole pipeline runnable
//! offline. [`RemoteEmbedder`] speaks an embeddings HTTP endpoint behind the
//! same trait, and [`TableEmbedder`] pins exact inputs to hand-chosen
//! vectors for reproducible experiments and oracle tests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dimension used by `HashEmbedder::default()`.
pub const DEFAULT_DIM: usize = 256;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("text has no embeddable tokens")]
    EmptyInput,
    #[error("embedding dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero-magnitude vector has no direction")]
    ZeroMagnitude,
    #[error("no table entry for input text {text:?}")]
    MissingEntry { text: String },
    #[error("embedding endpoint {url}: {detail}")]
    Endpoint { url: String, detail: String },
}

/// A dense vector with unit L2 norm.
///
/// Construction goes through [`Embedding::from_unnormalized`], which
/// normalizes and rejects zero vectors. Deserialized values (e.g. from a
/// persisted index) are trusted to have been normalized when written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Scales `values` to unit L2 norm. Zero or non-finite magnitudes are
    /// rejected: such vectors have no direction, so cosine against them is
    /// undefined.
    pub fn from_unnormalized(values: Vec<f64>) -> Result<Self, EmbedError> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbedError::ZeroMagnitude);
        }
        Ok(Embedding(values.into_iter().map(|v| v / norm).collect()))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Cosine similarity, clamped into [-1, 1] to absorb rounding drift.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.values().iter().zip(b.values()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EmbedError::ZeroMagnitude);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

pub trait Embedder {
    fn name(&self) -> &'static str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError>;
}

/// Lowercased alphanumeric tokens; everything else separates.
fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Deterministic local embedder: FNV-1a feature hashing of the token bag.
///
/// Each lowercased token is hashed to a bucket (`fnv1a64 % dim`) and counted;
/// the count vector is L2-normalized. Token order therefore never matters,
/// only the multiset of tokens.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder { dim }
    }

    /// Bucket index a single token hashes into.
    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(token.as_bytes()) % self.dim as u64) as usize
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(DEFAULT_DIM)
    }
}

impl Embedder for HashEmbedder {
    fn name(&self) -> &'static str {
        "hash"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        let mut counts = vec![0.0; self.dim];
        let mut seen = false;
        for token in tokens(text) {
            counts[self.bucket(&token)] += 1.0;
            seen = true;
        }
        if !seen {
            return Err(EmbedError::EmptyInput);
        }
        Embedding::from_unnormalized(counts)
    }
}

/// Lookup-table embedder mapping exact input strings to preassigned vectors.
///
/// Unknown inputs are an error so fixture tables stay exhaustive. Inserted
/// vectors are normalized on the way in.
#[derive(Debug, Clone, Default)]
pub struct TableEmbedder {
    dim: usize,
    table: BTreeMap<String, Embedding>,
}

impl TableEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        TableEmbedder {
            dim,
            table: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, text: impl Into<String>, values: Vec<f64>) -> Result<(), EmbedError> {
        if values.len() != self.dim {
            return Err(EmbedError::DimensionMismatch {
                left: self.dim,
                right: values.len(),
            });
        }
        self.table
            .insert(text.into(), Embedding::from_unnormalized(values)?);
        Ok(())
    }
}

impl Embedder for TableEmbedder {
    fn name(&self) -> &'static str {
        "table"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| EmbedError::MissingEntry {
                text: text.to_string(),
            })
    }
}

/// Embeddings endpoint client (OpenAI-style `{"model", "input"}` POST body).
///
/// Returned vectors are checked for the configured dimension and
/// re-normalized, so downstream cosine math sees the same invariants as the
/// local provider. Never exercised by tests; live mode only.
pub struct RemoteEmbedder {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    dim: usize,
}

impl RemoteEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        dim: usize,
    ) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        RemoteEmbedder {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            dim,
        }
    }
}

#[derive(Serialize)]
struct EmbeddingsBody<'a> {
    model: &'a str,
    input: [&'a str; 1],
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingsDatum>,
}

#[derive(Deserialize)]
struct EmbeddingsDatum {
    embedding: Vec<f64>,
}

impl Embedder for RemoteEmbedder {
    fn name(&self) -> &'static str {
        "remote"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        if tokens(text).next().is_none() {
            return Err(EmbedError::EmptyInput);
        }
        let endpoint = |detail: String| EmbedError::Endpoint {
            url: self.endpoint.clone(),
            detail,
        };
        let mut request = ureq::post(&self.endpoint);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(EmbeddingsBody {
                model: &self.model,
                input: [text],
            })
            .map_err(|e| endpoint(e.to_string()))?;
        let parsed: EmbeddingsResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| endpoint(format!("unreadable response body: {e}")))?;
        let datum = parsed
            .data
            .into_iter()
            .next()
            .ok_or_else(|| endpoint("response carried no embedding data".into()))?;
        if datum.embedding.len() != self.dim {
            return Err(EmbedError::DimensionMismatch {
                left: self.dim,
                right: datum.embedding.len(),
            });
        }
        Embedding::from_unnormalized(datum.embedding)
    }
}
