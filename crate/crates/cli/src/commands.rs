//! The six pipeline commands.
//!
//! Each command that produces a directory also writes a `manifest.json`
//! naming its output files. Nothing here writes a timestamp, so reruns on
//! identical inputs are byte-identical.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use cverag_core::config::{PipelineConfig, NVD_API_KEY_ENV};
use cverag_core::corpus::{to_csv_doc, CorpusStore};
use cverag_core::dpo::{
    build_preference_dataset, dpo_optimize, export_jsonl, preference_margins, toy_preference_set,
    write_loss_trace_csv, DpoConfig, DEFAULT_PROMPT_TEMPLATE,
};
use cverag_core::eval::{evaluate_run, read_samples_jsonl, render_table};
use cverag_core::ingest::{
    build_conflict_record, describe_field_changes, filter_high_severity, read_local_record,
    CveRecord, DateWindow, IngestError, NvdClient,
};
use cverag_core::llm::{rag_chat_request, ChatTransport};
use cverag_core::registry::{
    build_embedder, build_judge, build_question_generator, build_strategy, build_transport,
    StrategyDeps,
};
use cverag_core::retrieve::{resolve_parents, IndexBundle, ParentHit, SynonymTable};
use cverag_core::{chunk, corpus};

use crate::error::{io_err, AppError};

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    outputs: Vec<String>,
}

fn write_manifest(out_dir: &Path, command: &str, outputs: Vec<String>) -> Result<(), AppError> {
    let manifest = RunManifest { command, outputs };
    let path = out_dir.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest)
        .map_err(|e| AppError::Internal(format!("manifest serialization failed: {e}")))?;
    std::fs::write(&path, body + "\n").map_err(|e| io_err(&path, e))
}

fn create_dir(path: &Path) -> Result<(), AppError> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn offline_embedder_check(config: &PipelineConfig, offline: bool) -> Result<(), AppError> {
    if offline && config.index.embedder != "hash" {
        return Err(AppError::Config(format!(
            "offline mode requires the hash embedder, config names {:?}",
            config.index.embedder
        )));
    }
    Ok(())
}

fn offline_transport_check(config: &PipelineConfig, offline: bool) -> Result<(), AppError> {
    if offline && config.llm.transport != "replay" {
        return Err(AppError::Config(format!(
            "offline mode requires the replay transport, config names {:?}",
            config.llm.transport
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn ingest(
    config: &PipelineConfig,
    offline: bool,
    nvd_fixtures: Option<&Path>,
    cvelist: Option<&Path>,
    window: &str,
    out: &Path,
    live: bool,
) -> Result<(), AppError> {
    let window = DateWindow::parse(window)?;

    let mut client = if live {
        if offline {
            return Err(AppError::Config(
                "--live and --offline are mutually exclusive".to_string(),
            ));
        }
        NvdClient::live(
            config.ingest.nvd_api_url.clone(),
            std::env::var(NVD_API_KEY_ENV).ok(),
            config.ingest.rate_limit_requests,
            Duration::from_secs(config.ingest.rate_limit_secs),
        )
    } else {
        let dir = nvd_fixtures.ok_or_else(|| {
            AppError::Config("provide --nvd-fixtures <dir> or --live".to_string())
        })?;
        if !dir.is_dir() {
            return Err(AppError::Config(format!(
                "fixture directory {} does not exist",
                dir.display()
            )));
        }
        NvdClient::fixture(dir)
    };

    let changed = client.fetch_changes(&window)?;
    let high = filter_high_severity(changed.clone());

    create_dir(out)?;
    let store = CorpusStore::new(out);
    let docs: Vec<_> = high.iter().map(to_csv_doc).collect();
    let mut outputs = Vec::new();
    if !docs.is_empty() {
        let entries = store.save_corpus(&docs)?;
        outputs.extend(entries.iter().map(|e| e.path.clone()));
        outputs.push("manifest.jsonl".to_string());
    }

    let mut conflicts = 0usize;
    if let Some(cvelist_dir) = cvelist {
        for record in &high {
            let Some(old) = read_local_record(cvelist_dir, &record.cve_id)? else {
                continue;
            };
            let summary = describe_field_changes(&old, record);
            match build_conflict_record(&old, record, &summary) {
                Ok(conflict) => {
                    let path = store.write_conflict(&conflict)?;
                    outputs.push(
                        path.strip_prefix(out)
                            .unwrap_or(&path)
                            .display()
                            .to_string(),
                    );
                    conflicts += 1;
                }
                Err(IngestError::NoChange { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }
        if conflicts > 0 {
            outputs.push("conflicts/manifest.jsonl".to_string());
        }
    }

    print_ingest_summary(&changed, &high, conflicts);
    write_manifest(out, "ingest", outputs)
}

fn print_ingest_summary(changed: &[CveRecord], high: &[CveRecord], conflicts: usize) {
    let mut by_year: BTreeMap<i32, (usize, usize)> = BTreeMap::new();
    for record in changed {
        by_year.entry(record.id_year().unwrap_or(0)).or_default().0 += 1;
    }
    for record in high {
        by_year.entry(record.id_year().unwrap_or(0)).or_default().1 += 1;
    }
    println!("{:>6} {:>8} {:>6}", "year", "changed", "high");
    for (year, (changed_count, high_count)) in &by_year {
        println!("{year:>6} {changed_count:>8} {high_count:>6}");
    }
    println!("{:>6} {:>8} {:>6}", "total", changed.len(), high.len());
    println!("conflict records written: {conflicts}");
}

pub fn index(
    config: &PipelineConfig,
    corpus_dir: &Path,
    out: &Path,
    percentile: Option<f64>,
) -> Result<(), AppError> {
    // index building embeds every chunk, so the embedder must be buildable
    let embedder = build_embedder(config)?;

    let store = CorpusStore::new(corpus_dir);
    let docs = store.load_corpus()?;
    let merged = corpus::merge_corpus(&docs)?;

    let mut breakpoints = config.index.breakpoints();
    if let Some(p) = percentile {
        breakpoints.percentile = p;
    }
    let run = chunk::chunk_corpus(&merged, &breakpoints, embedder.as_ref())?;
    let report_rows = chunk::chunk_report(&run);
    let report_csv = chunk::write_chunk_report(&report_rows)?;

    let parent_count = run.parents.len();
    let chunk_count = run.chunks.len();
    let bundle = IndexBundle::build(
        run.parents,
        run.chunks,
        embedder.name(),
        embedder.dim(),
        config.retrieve.bm25_params(),
        breakpoints.percentile,
    )?;

    create_dir(out)?;
    let index_path = out.join("index.jsonl");
    bundle.save(&index_path)?;
    let report_path = out.join("chunk_report.csv");
    std::fs::write(&report_path, report_csv).map_err(|e| io_err(&report_path, e))?;

    println!(
        "indexed {} records into {} parents / {} chunks (embedder {}, dim {}, percentile {})",
        merged.record_count(),
        parent_count,
        chunk_count,
        embedder.name(),
        embedder.dim(),
        breakpoints.percentile,
    );
    write_manifest(
        out,
        "index",
        vec!["index.jsonl".to_string(), "chunk_report.csv".to_string()],
    )
}

#[derive(Serialize)]
struct QueryArtifact<'a> {
    question: &'a str,
    mode: &'a str,
    strategy: &'a str,
    parents: Vec<ParentSummary>,
    answer: Option<String>,
}

#[derive(Serialize)]
struct ParentSummary {
    rank: usize,
    score: f64,
    cve_id: String,
    parent_id: String,
}

fn summarize_parents(parents: &[ParentHit]) -> Vec<ParentSummary> {
    parents
        .iter()
        .enumerate()
        .map(|(i, hit)| ParentSummary {
            rank: i + 1,
            score: hit.score,
            cve_id: hit.parent.cve_id.clone(),
            parent_id: hit.parent.parent_id.clone(),
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn query(
    config: &PipelineConfig,
    offline: bool,
    index_path: &Path,
    strategy_name: Option<&str>,
    top_k: Option<usize>,
    rag: bool,
    out: Option<&Path>,
    question: &str,
) -> Result<(), AppError> {
    offline_embedder_check(config, offline)?;
    let embedder = build_embedder(config)?;
    let bundle = IndexBundle::load(index_path)?;
    if bundle.meta.embedder != embedder.name() || bundle.meta.dim != embedder.dim() {
        return Err(AppError::Config(format!(
            "index was built with embedder {} (dim {}), config names {} (dim {})",
            bundle.meta.embedder,
            bundle.meta.dim,
            embedder.name(),
            embedder.dim(),
        )));
    }

    let synonyms = if config.retrieve.expand_synonyms {
        SynonymTable::default_security()
    } else {
        SynonymTable::empty()
    };
    let deps = StrategyDeps {
        bundle: &bundle,
        embedder: embedder.as_ref(),
        synonyms: &synonyms,
        config,
    };
    let strategy_name = strategy_name.unwrap_or(&config.retrieve.strategy);
    let strategy = build_strategy(strategy_name, &deps)?;

    let k = top_k.unwrap_or(config.retrieve.top_k);
    let hits = strategy.search(question, k)?;
    let parents = resolve_parents(&hits, &bundle.chunk_parents(), &bundle.parents_by_id())?;

    let mut answer = None;
    if rag {
        offline_transport_check(config, offline)?;
        let transport = build_transport(config)?;
        let request = rag_chat_request(
            question,
            &parents,
            config.llm.context_budget,
            &config.llm.model,
            config.llm.temperature,
        )?;
        let response = transport.send(&request)?;
        answer = Some(response.content);
    }

    for (i, hit) in parents.iter().enumerate() {
        println!(
            "{:>3}. {:>10.6}  {}  ({})",
            i + 1,
            hit.score,
            hit.parent.cve_id,
            hit.parent.parent_id
        );
    }
    if let Some(answer) = &answer {
        println!("---");
        println!("{answer}");
    }

    if let Some(out_path) = out {
        let artifact = QueryArtifact {
            question,
            mode: if rag { "rag" } else { "retrieve" },
            strategy: strategy_name,
            parents: summarize_parents(&parents),
            answer,
        };
        let body = serde_json::to_string_pretty(&artifact)
            .map_err(|e| AppError::Internal(format!("artifact serialization failed: {e}")))?;
        std::fs::write(out_path, body + "\n").map_err(|e| io_err(out_path, e))?;
    }
    Ok(())
}

pub fn export_dpo(corpus_dir: &Path, out: &Path) -> Result<(), AppError> {
    let store = CorpusStore::new(corpus_dir);
    let conflicts = store.load_conflicts()?;
    if conflicts.is_empty() {
        std::fs::write(out, "").map_err(|e| io_err(out, e))?;
        eprintln!("warning: no conflict records found; wrote an empty dataset");
        println!("exported 0 preference triples to {}", out.display());
        return Ok(());
    }
    let triples = build_preference_dataset(&conflicts, DEFAULT_PROMPT_TEMPLATE)?;
    std::fs::write(out, export_jsonl(&triples)).map_err(|e| io_err(out, e))?;
    println!(
        "exported {} preference triples to {}",
        triples.len(),
        out.display()
    );
    Ok(())
}

pub fn eval(
    config: &PipelineConfig,
    offline: bool,
    samples_path: &Path,
    out: &Path,
) -> Result<(), AppError> {
    offline_embedder_check(config, offline)?;
    let samples = read_samples_jsonl(samples_path)?;
    if samples.is_empty() {
        return Err(AppError::Config(format!(
            "{} contains no samples",
            samples_path.display()
        )));
    }

    let embedder = build_embedder(config)?;
    let needs_llm = config.eval.judge == "llm" || config.eval.question_generator == "llm";
    let transport: Box<dyn ChatTransport> = if needs_llm {
        offline_transport_check(config, offline)?;
        build_transport(config)?
    } else {
        Box::new(UnusedTransport)
    };
    let judge = build_judge(config, transport.as_ref())?;
    let generator = build_question_generator(config, transport.as_ref())?;

    let report = evaluate_run(
        &samples,
        judge.as_ref(),
        generator.as_ref(),
        embedder.as_ref(),
        &config.eval.eval_config(),
    )?;

    let table = render_table(&report);
    create_dir(out)?;
    let json_path = out.join("report.json");
    std::fs::write(&json_path, report.to_json()?).map_err(|e| io_err(&json_path, e))?;
    let table_path = out.join("report.txt");
    std::fs::write(&table_path, &table).map_err(|e| io_err(&table_path, e))?;

    print!("{table}");
    write_manifest(
        out,
        "eval",
        vec!["report.json".to_string(), "report.txt".to_string()],
    )
}

/// Stand-in for configurations that never talk to a chat model (rule judge
/// with template questions). Fails loudly if something does call it.
struct UnusedTransport;

impl ChatTransport for UnusedTransport {
    fn name(&self) -> &'static str {
        "unused"
    }
    fn send(
        &self,
        _request: &cverag_core::llm::ChatRequest,
    ) -> Result<cverag_core::llm::ChatResponse, cverag_core::llm::LlmError> {
        Err(cverag_core::llm::LlmError::Network {
            url: "unused".to_string(),
            detail: "no chat transport was configured for this run".to_string(),
        })
    }
}

pub fn dpo_demo(
    config: &PipelineConfig,
    seed: u64,
    out: &Path,
    steps: Option<usize>,
) -> Result<(), AppError> {
    let mut dpo_config: DpoConfig = config.dpo.dpo_config();
    if let Some(steps) = steps {
        dpo_config.steps = steps;
    }

    let (reference, triples) = toy_preference_set();
    let run = dpo_optimize(&reference, &reference, &triples, &dpo_config)?;
    let accuracy = run.policy.preference_accuracy(&triples)?;
    let margins = preference_margins(&run.policy, &reference, &triples, dpo_config.beta)?;
    let min_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);

    create_dir(out)?;
    let trace_path = out.join("loss_trace.csv");
    std::fs::write(&trace_path, write_loss_trace_csv(&run.trace))
        .map_err(|e| io_err(&trace_path, e))?;

    println!(
        "loss {:.6} -> {:.6} over {} steps",
        run.trace.first().copied().unwrap_or(f64::NAN),
        run.trace.last().copied().unwrap_or(f64::NAN),
        dpo_config.steps,
    );
    println!("preference accuracy: {accuracy:.2} (ties count as incorrect)");
    println!("minimum preference margin: {min_margin:.4}");

    // a seeded taste of the trained policy: sample completions for the
    // first prompt and count how often the preferred one comes up
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = &triples[0];
    let draws = 20;
    let mut preferred = 0usize;
    for _ in 0..draws {
        if run.policy.sample(&first.prompt, &mut rng)? == first.chosen {
            preferred += 1;
        }
    }
    println!(
        "sampled the first prompt {draws} times (seed {seed}): preferred completion drawn {preferred} times"
    );

    write_manifest(out, "dpo-demo", vec!["loss_trace.csv".to_string()])
}
