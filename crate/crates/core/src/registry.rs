//! Name-keyed registries for the pluggable pieces of the pipeline.
//!
//! Each algorithm family — embedders, chat transports, judges, question
//! generators, search strategies — lives behind a trait, and a registry
//! maps stable names to builder functions so the variant is chosen at
//! runtime from config or a CLI flag. Unknown names fail with the list of
//! registered alternatives.

use std::collections::BTreeMap;

use crate::config::{ConfigError, PipelineConfig, EMBEDDING_API_KEY_ENV, LLM_API_KEY_ENV};
use crate::embed::{Embedder, HashEmbedder, RemoteEmbedder};
use crate::eval::{
    Judge, LlmJudge, LlmQuestionGenerator, QuestionGenerator, RuleJudge, TemplateQuestionGenerator,
};
use crate::llm::{ChatTransport, HttpChatTransport, ReplayTransport};
use crate::retrieve::{
    Bm25Strategy, EnsembleStrategy, IndexBundle, SearchStrategy, SynonymTable, VectorStrategy,
};

/// Maps stable names to builders of one algorithm family.
pub struct Registry<B> {
    kind: &'static str,
    entries: BTreeMap<&'static str, B>,
}

impl<B> Registry<B> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Adds a builder under `name`. Registering a name twice is a
    /// programming error, not a runtime condition.
    pub fn register(mut self, name: &'static str, builder: B) -> Self {
        let previous = self.entries.insert(name, builder);
        assert!(
            previous.is_none(),
            "{} {name:?} registered twice",
            self.kind
        );
        self
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn get(&self, name: &str) -> Result<&B, ConfigError> {
        self.entries
            .get(name)
            .ok_or_else(|| ConfigError::UnknownName {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }
}

fn missing(field: &str, needed_by: &str) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        detail: format!("required by the {needed_by}"),
    }
}

pub type EmbedderBuilder = fn(&PipelineConfig) -> Result<Box<dyn Embedder>, ConfigError>;

pub fn embedders() -> Registry<EmbedderBuilder> {
    Registry::new("embedder")
        .register(
            "hash",
            (|config| Ok(Box::new(HashEmbedder::new(config.index.dim)) as Box<dyn Embedder>))
                as EmbedderBuilder,
        )
        .register(
            "remote",
            (|config: &PipelineConfig| {
                let endpoint = config
                    .index
                    .embedding_endpoint
                    .as_ref()
                    .ok_or_else(|| missing("index.embedding_endpoint", "remote embedder"))?;
                let model = config
                    .index
                    .embedding_model
                    .as_ref()
                    .ok_or_else(|| missing("index.embedding_model", "remote embedder"))?;
                Ok(Box::new(RemoteEmbedder::new(
                    endpoint,
                    model,
                    std::env::var(EMBEDDING_API_KEY_ENV).ok(),
                    config.index.dim,
                )) as Box<dyn Embedder>)
            }) as EmbedderBuilder,
        )
}

pub type TransportBuilder = fn(&PipelineConfig) -> Result<Box<dyn ChatTransport>, ConfigError>;

pub fn transports() -> Registry<TransportBuilder> {
    Registry::new("chat transport")
        .register(
            "replay",
            (|config| {
                let dir = config
                    .llm
                    .replay_dir
                    .as_ref()
                    .ok_or_else(|| missing("llm.replay_dir", "replay transport"))?;
                Ok(Box::new(ReplayTransport::new(dir)) as Box<dyn ChatTransport>)
            }) as TransportBuilder,
        )
        .register(
            "http",
            (|config: &PipelineConfig| {
                let endpoint = config
                    .llm
                    .endpoint
                    .as_ref()
                    .ok_or_else(|| missing("llm.endpoint", "http transport"))?;
                Ok(Box::new(HttpChatTransport::new(
                    endpoint,
                    std::env::var(LLM_API_KEY_ENV).ok(),
                )) as Box<dyn ChatTransport>)
            }) as TransportBuilder,
        )
}

pub type JudgeBuilder =
    for<'a> fn(&PipelineConfig, &'a dyn ChatTransport) -> Result<Box<dyn Judge + 'a>, ConfigError>;

pub fn judges() -> Registry<JudgeBuilder> {
    Registry::new("judge")
        .register(
            "rule",
            (|_config, _transport| Ok(Box::new(RuleJudge) as Box<dyn Judge>)) as JudgeBuilder,
        )
        .register(
            "llm",
            (|config, transport| {
                Ok(Box::new(LlmJudge::new(transport, config.llm.model.clone()))
                    as Box<dyn Judge + '_>)
            }) as JudgeBuilder,
        )
}

pub type QuestionGeneratorBuilder =
    for<'a> fn(
        &PipelineConfig,
        &'a dyn ChatTransport,
    ) -> Result<Box<dyn QuestionGenerator + 'a>, ConfigError>;

pub fn question_generators() -> Registry<QuestionGeneratorBuilder> {
    Registry::new("question generator")
        .register(
            "template",
            (|_config, _transport| {
                Ok(Box::new(TemplateQuestionGenerator) as Box<dyn QuestionGenerator>)
            }) as QuestionGeneratorBuilder,
        )
        .register(
            "llm",
            (|config, transport| {
                Ok(Box::new(LlmQuestionGenerator::new(
                    transport,
                    config.llm.model.clone(),
                )) as Box<dyn QuestionGenerator + '_>)
            }) as QuestionGeneratorBuilder,
        )
}

/// Everything a search strategy may borrow.
pub struct StrategyDeps<'a> {
    pub bundle: &'a IndexBundle,
    pub embedder: &'a dyn Embedder,
    pub synonyms: &'a SynonymTable,
    pub config: &'a PipelineConfig,
}

pub type StrategyBuilder =
    for<'a> fn(&StrategyDeps<'a>) -> Result<Box<dyn SearchStrategy + 'a>, ConfigError>;

pub fn strategies() -> Registry<StrategyBuilder> {
    Registry::new("search strategy")
        .register(
            "bm25",
            (|deps| {
                Ok(Box::new(Bm25Strategy {
                    index: &deps.bundle.bm25,
                }) as Box<dyn SearchStrategy + '_>)
            }) as StrategyBuilder,
        )
        .register(
            "vector",
            (|deps| {
                Ok(Box::new(VectorStrategy {
                    index: &deps.bundle.vectors,
                    embedder: deps.embedder,
                }) as Box<dyn SearchStrategy + '_>)
            }) as StrategyBuilder,
        )
        .register(
            "ensemble",
            (|deps| {
                Ok(Box::new(EnsembleStrategy {
                    bm25: &deps.bundle.bm25,
                    vectors: &deps.bundle.vectors,
                    embedder: deps.embedder,
                    synonyms: deps.synonyms,
                    config: deps.config.retrieve.ensemble(),
                }) as Box<dyn SearchStrategy + '_>)
            }) as StrategyBuilder,
        )
}

/// Builds the embedder named in the config.
pub fn build_embedder(config: &PipelineConfig) -> Result<Box<dyn Embedder>, ConfigError> {
    embedders().get(&config.index.embedder)?(config)
}

/// Builds the chat transport named in the config.
pub fn build_transport(config: &PipelineConfig) -> Result<Box<dyn ChatTransport>, ConfigError> {
    transports().get(&config.llm.transport)?(config)
}

/// Builds the judge named in the config, borrowing `transport`.
pub fn build_judge<'a>(
    config: &PipelineConfig,
    transport: &'a dyn ChatTransport,
) -> Result<Box<dyn Judge + 'a>, ConfigError> {
    judges().get(&config.eval.judge)?(config, transport)
}

/// Builds the question generator named in the config, borrowing
/// `transport`.
pub fn build_question_generator<'a>(
    config: &PipelineConfig,
    transport: &'a dyn ChatTransport,
) -> Result<Box<dyn QuestionGenerator + 'a>, ConfigError> {
    question_generators().get(&config.eval.question_generator)?(config, transport)
}

/// Builds the search strategy named in the config over the given deps.
pub fn build_strategy<'a>(
    name: &str,
    deps: &StrategyDeps<'a>,
) -> Result<Box<dyn SearchStrategy + 'a>, ConfigError> {
    strategies().get(name)?(deps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunk::{chunk_corpus, BreakpointConfig};
    use crate::corpus::{merge_corpus, to_csv_doc};
    use crate::retrieve::Bm25Params;

    #[test]
    fn unknown_names_list_the_alternatives() {
        let err = embedders().get("quantum").unwrap_err();
        match err {
            ConfigError::UnknownName {
                kind,
                name,
                available,
            } => {
                assert_eq!(kind, "embedder");
                assert_eq!(name, "quantum");
                assert_eq!(available, "hash, remote");
            }
            other => panic!("expected UnknownName, got {other:?}"),
        }
        assert_eq!(strategies().names(), ["bm25", "ensemble", "vector"]);
    }

    #[test]
    fn config_names_build_the_right_variants() {
        let mut config = PipelineConfig::default();
        config.llm.replay_dir = Some("replies".to_string());

        assert_eq!(build_embedder(&config).unwrap().name(), "hash");
        let transport = build_transport(&config).unwrap();
        assert_eq!(transport.name(), "replay");
        assert_eq!(
            build_judge(&config, transport.as_ref()).unwrap().name(),
            "rule"
        );
        assert_eq!(
            build_question_generator(&config, transport.as_ref())
                .unwrap()
                .name(),
            "template"
        );

        config.eval.judge = "llm".to_string();
        assert_eq!(
            build_judge(&config, transport.as_ref()).unwrap().name(),
            "llm"
        );
    }

    #[test]
    fn builders_report_missing_required_fields() {
        let config = PipelineConfig::default();
        match build_transport(&config) {
            Err(ConfigError::Invalid { field, .. }) => assert_eq!(field, "llm.replay_dir"),
            Err(other) => panic!("expected missing replay_dir, got {other:?}"),
            Ok(_) => panic!("expected an error"),
        }

        let mut remote = PipelineConfig::default();
        remote.index.embedder = "remote".to_string();
        match build_embedder(&remote) {
            Err(ConfigError::Invalid { field, .. }) => {
                assert_eq!(field, "index.embedding_endpoint")
            }
            Err(other) => panic!("expected missing endpoint, got {other:?}"),
            Ok(_) => panic!("expected an error"),
        }
    }

    #[test]
    fn strategies_build_and_search_over_a_bundle() {
        let config = PipelineConfig::default();
        let embedder = HashEmbedder::new(config.index.dim);
        let records = [
            ("CVE-2024-0001", "heap overflow in the png parser"),
            ("CVE-2024-0002", "auth bypass in the admin panel"),
        ];
        let docs: Vec<_> = records
            .iter()
            .map(|(id, text)| {
                let mut record =
                    crate::ingest::parse_cve_json(crate::ingest::tests::NVD_ITEM_HIGH).unwrap();
                record.cve_id = id.to_string();
                record.description = text.to_string();
                to_csv_doc(&record)
            })
            .collect();
        let merged = merge_corpus(&docs).unwrap();
        let run = chunk_corpus(&merged, &BreakpointConfig::default(), &embedder).unwrap();
        let bundle = IndexBundle::build(
            run.parents,
            run.chunks,
            embedder.name(),
            embedder.dim(),
            Bm25Params::default(),
            90.0,
        )
        .unwrap();
        let synonyms = SynonymTable::empty();
        let deps = StrategyDeps {
            bundle: &bundle,
            embedder: &embedder,
            synonyms: &synonyms,
            config: &config,
        };

        for name in ["bm25", "vector", "ensemble"] {
            let strategy = build_strategy(name, &deps).unwrap();
            assert_eq!(strategy.name(), name);
            let hits = strategy.search("png parser overflow", 1).unwrap();
            assert_eq!(hits.len(), 1, "strategy {name}");
            assert!(
                hits[0].chunk_id.starts_with("p00000"),
                "strategy {name} should hit the first record's chunks, got {}",
                hits[0].chunk_id
            );
        }
        assert!(matches!(
            build_strategy("grep", &deps),
            Err(ConfigError::UnknownName { .. })
        ));
    }
}
