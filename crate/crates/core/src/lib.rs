//! Core library for a CVE change-tracking retrieval pipeline.
//!
//! The crate covers the full path from vulnerability-feed ingestion to
//! evaluation:
//!
//! * [`ingest`] — NVD API / CVE List record normalization, severity
//!   filtering, and change-conflict construction;
//! * [`corpus`] — long-format CSV documents, manifests, and the four-key
//!   conflict JSON artifact;
//! * [`chunk`] — semantic chunking at embedding-distance percentile
//!   breakpoints with parent-document bookkeeping;
//! * [`embed`] — deterministic local feature-hashing embedder plus a remote
//!   HTTP provider behind one trait;
//! * [`retrieve`] — Okapi BM25, exhaustive vector search, synonym query
//!   expansion, and weighted reciprocal-rank fusion;
//! * [`dpo`] — preference triples and a tabular-softmax DPO trainer with
//!   finite-difference-checked gradients;
//! * [`eval`] — faithfulness / context precision / context recall / answer
//!   relevance / correctness / similarity, BLEU-4 and ROUGE-L;
//! * [`llm`] — chat-completions gateway with prompt templates, context
//!   augmentation, and digest-keyed replay fixtures for offline runs;
//! * [`config`] / [`registry`] — declarative pipeline configuration and
//!   name-keyed strategy registries for the pluggable pieces.

pub mod chunk;
pub mod config;
pub mod corpus;
pub mod dpo;
pub mod embed;
pub mod eval;
pub mod ingest;
pub mod llm;
pub mod registry;
pub mod retrieve;
