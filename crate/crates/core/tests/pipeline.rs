//! Drives the whole library through the shared demo fixtures: NVD pages in,
//! ranked parents and replayed chat answers out.

use std::path::{Path, PathBuf};

use cverag_core::chunk::{chunk_corpus, BreakpointConfig};
use cverag_core::corpus::{merge_corpus, to_csv_doc, CorpusStore};
use cverag_core::dpo::{
    build_preference_dataset, export_jsonl, import_jsonl, DEFAULT_PROMPT_TEMPLATE,
};
use cverag_core::embed::HashEmbedder;
use cverag_core::ingest::{
    build_conflict_record, describe_field_changes, filter_high_severity, read_local_record,
    DateWindow, NvdClient,
};
use cverag_core::llm::{rag_chat_request, ChatTransport, ReplayTransport};
use cverag_core::retrieve::{
    ensemble_search, resolve_parents, Bm25Params, EnsembleConfig, IndexBundle, ParentHit,
    SynonymTable,
};

fn fixture_dir(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn high_severity_fixture_records() -> Vec<cverag_core::ingest::CveRecord> {
    let window = DateWindow::parse("2024-01-01..2024-12-31").unwrap();
    let changed = NvdClient::fixture(fixture_dir("nvd"))
        .fetch_changes(&window)
        .unwrap();
    assert_eq!(changed.len(), 6, "both fixture pages should be read");
    filter_high_severity(changed)
}

fn build_demo_bundle(store_root: &Path) -> IndexBundle {
    let records = high_severity_fixture_records();
    let docs: Vec<_> = records.iter().map(to_csv_doc).collect();
    let store = CorpusStore::new(store_root);
    store.save_corpus(&docs).unwrap();

    // Reload through the manifest rather than reusing `docs`, so the test
    // covers the same path a separate indexing process would take.
    let reloaded = store.load_corpus().unwrap();
    let merged = merge_corpus(&reloaded).unwrap();
    let embedder = HashEmbedder::new(64);
    let run = chunk_corpus(&merged, &BreakpointConfig::default(), &embedder).unwrap();
    IndexBundle::build(
        run.parents,
        run.chunks,
        "hash",
        64,
        Bm25Params::default(),
        90.0,
    )
    .unwrap()
}

fn search_demo(bundle: &IndexBundle, query: &str) -> Vec<ParentHit> {
    let embedder = HashEmbedder::new(64);
    let hits = ensemble_search(
        query,
        &EnsembleConfig::default(),
        &bundle.bm25,
        &bundle.vectors,
        &embedder,
        &SynonymTable::default_security(),
    )
    .unwrap();
    resolve_parents(&hits, &bundle.chunk_parents(), &bundle.parents_by_id()).unwrap()
}

#[test]
fn fixture_pages_flow_through_to_ranked_parents() {
    let records = high_severity_fixture_records();
    let ids: Vec<&str> = records.iter().map(|r| r.cve_id.as_str()).collect();
    // The critical, medium, and unscored records are gone; only HIGH stays.
    assert_eq!(ids, ["CVE-2023-4863", "CVE-2023-38831", "CVE-2024-21302"]);

    let dir = tempfile::tempdir().unwrap();
    let bundle = build_demo_bundle(dir.path());
    assert_eq!(bundle.meta.parent_count, 3);

    let by_id = search_demo(&bundle, "CVE-2024-21302");
    assert_eq!(by_id[0].parent.cve_id, "CVE-2024-21302");

    let by_text = search_demo(&bundle, "heap buffer overflow in a crafted webp image");
    assert_eq!(by_text[0].parent.cve_id, "CVE-2023-4863");
}

#[test]
fn saved_index_reloads_and_rewrites_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = build_demo_bundle(dir.path());

    let first_path = dir.path().join("index.jsonl");
    bundle.save(&first_path).unwrap();
    let loaded = IndexBundle::load(&first_path).unwrap();
    assert_eq!(loaded.meta, bundle.meta);

    let second_path = dir.path().join("index2.jsonl");
    loaded.save(&second_path).unwrap();
    let first = std::fs::read(&first_path).unwrap();
    let second = std::fs::read(&second_path).unwrap();
    assert_eq!(first, second, "save -> load -> save must not drift");

    // The reloaded index answers queries exactly like the one it came from.
    let before: Vec<String> = search_demo(&bundle, "winrar archive extraction")
        .into_iter()
        .map(|h| h.parent.cve_id)
        .collect();
    let after: Vec<String> = search_demo(&loaded, "winrar archive extraction")
        .into_iter()
        .map(|h| h.parent.cve_id)
        .collect();
    assert_eq!(before, after);
}

#[test]
fn local_history_becomes_an_importable_preference_dataset() {
    let records = high_severity_fixture_records();
    let cvelist = fixture_dir("cvelist");

    let mut conflicts = Vec::new();
    for record in &records {
        let old = read_local_record(&cvelist, &record.cve_id)
            .unwrap()
            .expect("every HIGH fixture record has a local history file");
        let summary = describe_field_changes(&old, record);
        conflicts.push(build_conflict_record(&old, record, &summary).unwrap());
    }
    assert_eq!(conflicts.len(), 3);

    // The upgraded CVE-2024-21302 entry must surface its severity bump.
    let upgraded = conflicts
        .iter()
        .find(|c| c.cve_id == "CVE-2024-21302")
        .unwrap();
    assert!(upgraded.changed_details.contains("MEDIUM -> HIGH"));

    let triples = build_preference_dataset(&conflicts, DEFAULT_PROMPT_TEMPLATE).unwrap();
    assert_eq!(triples.len(), 3);
    for (triple, conflict) in triples.iter().zip(&conflicts) {
        assert!(triple.prompt.contains(&conflict.cve_id));
        assert_eq!(triple.chosen, conflict.new_value);
        assert_eq!(triple.rejected, conflict.old_value);
    }

    let exported = export_jsonl(&triples);
    let imported = import_jsonl(&exported).unwrap();
    assert_eq!(imported, triples);
    assert_eq!(export_jsonl(&imported), exported);
}

#[test]
fn recorded_chat_replies_replay_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = build_demo_bundle(dir.path());
    let parents = search_demo(&bundle, "What does CVE-2023-4863 allow?");

    let request = rag_chat_request(
        "What does CVE-2023-4863 allow?",
        &parents,
        4000,
        "local-replay",
        0.0,
    )
    .unwrap();

    let transport = ReplayTransport::new(dir.path().join("replay"));
    let miss = transport.send(&request).unwrap_err();
    assert!(miss.to_string().contains("no recorded reply"));

    transport
        .record(
            &request,
            "A heap buffer overflow enabling out of bounds writes.",
        )
        .unwrap();
    let first = transport.send(&request).unwrap();
    let second = transport.send(&request).unwrap();
    assert_eq!(first.content, second.content);
    assert_eq!(
        first.content,
        "A heap buffer overflow enabling out of bounds writes."
    );
}
