//! Pipeline configuration loaded from TOML.
//!
//! Every field has a default matching the corresponding module default, so
//! an empty file (or no file) is a valid configuration. Secrets are never
//! part of the file: API keys are read from the environment variables named
//! by the `*_ENV` constants at the point of use.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunk::BreakpointConfig;
use crate::dpo::DpoConfig;
use crate::eval::{AcWeights, EvalConfig};
use crate::ingest::{DEFAULT_NVD_API_URL, DEFAULT_RATE_LIMIT};
use crate::retrieve::{Bm25Params, EnsembleConfig};

/// Environment variable holding the NVD API key for live ingestion.
pub const NVD_API_KEY_ENV: &str = "NVD_API_KEY";
/// Environment variable holding the chat endpoint's API key.
pub const LLM_API_KEY_ENV: &str = "LLM_API_KEY";
/// Environment variable holding the remote embedder's API key.
pub const EMBEDDING_API_KEY_ENV: &str = "EMBEDDING_API_KEY";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("invalid value for {field}: {detail}")]
    Invalid { field: String, detail: String },
    #[error("unknown {kind} {name:?}; available: {available}")]
    UnknownName {
        kind: &'static str,
        name: String,
        available: String,
    },
}

fn invalid(field: &str, err: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        detail: err.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub nvd_api_url: String,
    /// Live-mode request quota: at most `rate_limit_requests` calls per
    /// `rate_limit_secs` rolling window.
    pub rate_limit_requests: usize,
    pub rate_limit_secs: u64,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection {
            nvd_api_url: DEFAULT_NVD_API_URL.to_string(),
            rate_limit_requests: DEFAULT_RATE_LIMIT.0,
            rate_limit_secs: DEFAULT_RATE_LIMIT.1.as_secs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexSection {
    /// Embedder name from the registry ("hash" or "remote").
    pub embedder: String,
    pub dim: usize,
    /// Remote embedder endpoint and model; required only when
    /// `embedder = "remote"`.
    pub embedding_endpoint: Option<String>,
    pub embedding_model: Option<String>,
    pub percentile: f64,
    pub min_chunk_sentences: usize,
}

impl Default for IndexSection {
    fn default() -> Self {
        let breakpoints = BreakpointConfig::default();
        IndexSection {
            embedder: "hash".to_string(),
            dim: crate::embed::DEFAULT_DIM,
            embedding_endpoint: None,
            embedding_model: None,
            percentile: breakpoints.percentile,
            min_chunk_sentences: breakpoints.min_chunk_sentences,
        }
    }
}

impl IndexSection {
    pub fn breakpoints(&self) -> BreakpointConfig {
        BreakpointConfig {
            percentile: self.percentile,
            min_chunk_sentences: self.min_chunk_sentences,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrieveSection {
    /// Search strategy name from the registry ("bm25", "vector",
    /// "ensemble").
    pub strategy: String,
    pub k1: f64,
    pub b: f64,
    pub weight_vector: f64,
    pub weight_bm25: f64,
    pub fusion_k: u32,
    pub top_k: usize,
    /// Expand queries with the built-in security synonym table.
    pub expand_synonyms: bool,
}

impl Default for RetrieveSection {
    fn default() -> Self {
        let params = Bm25Params::default();
        let ensemble = EnsembleConfig::default();
        RetrieveSection {
            strategy: "ensemble".to_string(),
            k1: params.k1,
            b: params.b,
            weight_vector: ensemble.weight_vector,
            weight_bm25: ensemble.weight_bm25,
            fusion_k: ensemble.fusion_k,
            top_k: ensemble.top_k,
            expand_synonyms: true,
        }
    }
}

impl RetrieveSection {
    pub fn bm25_params(&self) -> Bm25Params {
        Bm25Params {
            k1: self.k1,
            b: self.b,
        }
    }

    pub fn ensemble(&self) -> EnsembleConfig {
        EnsembleConfig {
            weight_vector: self.weight_vector,
            weight_bm25: self.weight_bm25,
            fusion_k: self.fusion_k,
            top_k: self.top_k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpoSection {
    pub beta: f64,
    pub learning_rate: f64,
    pub steps: usize,
}

impl Default for DpoSection {
    fn default() -> Self {
        let config = DpoConfig::default();
        DpoSection {
            beta: config.beta,
            learning_rate: config.learning_rate,
            steps: config.steps,
        }
    }
}

impl DpoSection {
    pub fn dpo_config(&self) -> DpoConfig {
        DpoConfig {
            beta: self.beta,
            learning_rate: self.learning_rate,
            steps: self.steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Judge name from the registry ("rule" or "llm").
    pub judge: String,
    /// Question generator name ("template" or "llm").
    pub question_generator: String,
    pub question_count: usize,
    pub weight_claim_f1: f64,
    pub weight_similarity: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let config = EvalConfig::default();
        EvalSection {
            judge: "rule".to_string(),
            question_generator: "template".to_string(),
            question_count: config.question_count,
            weight_claim_f1: config.weights.claim_f1,
            weight_similarity: config.weights.similarity,
        }
    }
}

impl EvalSection {
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            question_count: self.question_count,
            weights: AcWeights {
                claim_f1: self.weight_claim_f1,
                similarity: self.weight_similarity,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    /// Chat transport name from the registry ("replay" or "http").
    pub transport: String,
    /// Directory of recorded replies; required for the replay transport.
    pub replay_dir: Option<String>,
    /// Chat-completions URL; required for the http transport.
    pub endpoint: Option<String>,
    pub model: String,
    pub temperature: f64,
    /// Maximum characters of retrieved context spliced into a prompt.
    pub context_budget: usize,
}

impl Default for LlmSection {
    fn default() -> Self {
        LlmSection {
            transport: "replay".to_string(),
            replay_dir: None,
            endpoint: None,
            model: "local-replay".to_string(),
            temperature: 0.0,
            context_budget: 4000,
        }
    }
}

/// The full pipeline configuration. Missing sections and fields take their
/// defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub ingest: IngestSection,
    pub index: IndexSection,
    pub retrieve: RetrieveSection,
    pub dpo: DpoSection,
    pub eval: EvalSection,
    pub llm: LlmSection,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: PipelineConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Range-checks every numeric field by round-tripping through the
    /// owning module's own validation.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.ingest.rate_limit_requests == 0 {
            return Err(invalid("ingest.rate_limit_requests", "must be at least 1"));
        }
        if self.index.dim == 0 {
            return Err(invalid("index.dim", "must be at least 1"));
        }
        self.index
            .breakpoints()
            .validate()
            .map_err(|e| invalid("index.percentile", e))?;
        self.retrieve
            .bm25_params()
            .validate()
            .map_err(|e| invalid("retrieve.k1", e))?;
        self.retrieve
            .ensemble()
            .validate()
            .map_err(|e| invalid("retrieve.weight_vector", e))?;
        self.dpo
            .dpo_config()
            .validate()
            .map_err(|e| invalid("dpo.beta", e))?;
        self.eval
            .eval_config()
            .validate()
            .map_err(|e| invalid("eval.question_count", e))?;
        if !self.llm.temperature.is_finite() || self.llm.temperature < 0.0 {
            return Err(invalid(
                "llm.temperature",
                "must be finite and non-negative",
            ));
        }
        if self.llm.context_budget == 0 {
            return Err(invalid("llm.context_budget", "must be at least 1"));
        }
        Ok(())
    }
}
