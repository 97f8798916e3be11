//! `cverag` — build, query, and evaluate a CVE retrieval pipeline from the
//! command line.
//!
//! Every command is deterministic in offline/replay mode: rerunning on the
//! same inputs produces byte-identical outputs, and nothing written here
//! embeds a timestamp. Exit codes are classed: 2 config, 3 input,
//! 4 network, 5 internal.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cverag_core::config::PipelineConfig;
use error::AppError;

#[derive(Parser)]
#[command(
    name = "cverag",
    version,
    about = "CVE retrieval pipeline: ingest, index, query, evaluate"
)]
struct Cli {
    /// TOML config file; defaults to ./cverag.toml when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every random draw (sampling demos).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Refuse anything that would touch the network.
    #[arg(long, global = true)]
    offline: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fetch changed CVE records, keep the HIGH-severity ones, and record
    /// conflicts against prior record versions.
    Ingest {
        /// Directory of recorded NVD result pages (offline source).
        #[arg(long)]
        nvd_fixtures: Option<PathBuf>,
        /// Directory of prior record versions, one <CVE-ID>.json each.
        #[arg(long)]
        cvelist: Option<PathBuf>,
        /// Inclusive last-modified window, YYYY-MM-DD..YYYY-MM-DD.
        #[arg(long)]
        window: String,
        /// Corpus directory to write.
        #[arg(long)]
        out: PathBuf,
        /// Query the live NVD API instead of fixtures.
        #[arg(long)]
        live: bool,
    },
    /// Merge the corpus, chunk it, and persist the search indexes.
    Index {
        /// Corpus directory written by `ingest`.
        #[arg(long)]
        corpus: PathBuf,
        /// Output directory for the index and chunk report.
        #[arg(long)]
        out: PathBuf,
        /// Breakpoint percentile override.
        #[arg(long)]
        percentile: Option<f64>,
    },
    /// Search the index, optionally asking the chat model for an answer.
    Query {
        /// Index file written by `index`.
        #[arg(long)]
        index: PathBuf,
        /// Retrieval strategy; defaults to the configured one.
        #[arg(long)]
        strategy: Option<String>,
        /// How many results to return.
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long, value_enum, default_value_t = QueryMode::Retrieve)]
        mode: QueryMode,
        /// Write the full result as JSON here as well.
        #[arg(long)]
        out: Option<PathBuf>,
        /// The question to search for.
        question: String,
    },
    /// Export conflict records as a preference-tuning dataset.
    ExportDpo {
        /// Corpus directory holding conflict records.
        #[arg(long)]
        corpus: PathBuf,
        /// JSONL file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score answer samples and render the metrics table.
    Eval {
        /// JSONL of evaluation samples.
        #[arg(long)]
        samples: PathBuf,
        /// Output directory for the report files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the bundled toy policy with preference optimization.
    DpoDemo {
        /// Output directory for the loss trace.
        #[arg(long)]
        out: PathBuf,
        /// Gradient steps override.
        #[arg(long)]
        steps: Option<usize>,
    },
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum QueryMode {
    /// Print the ranked parent documents.
    Retrieve,
    /// Augment the question with retrieved context and ask the chat model.
    Rag,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, AppError> {
    match &cli.config {
        Some(path) => Ok(PipelineConfig::load(path)?),
        None => {
            let default_path = PathBuf::from("cverag.toml");
            if default_path.exists() {
                Ok(PipelineConfig::load(&default_path)?)
            } else {
                Ok(PipelineConfig::default())
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Ingest {
            nvd_fixtures,
            cvelist,
            window,
            out,
            live,
        } => commands::ingest(
            &config,
            cli.offline,
            nvd_fixtures.as_deref(),
            cvelist.as_deref(),
            window,
            out,
            *live,
        ),
        Command::Index {
            corpus,
            out,
            percentile,
        } => commands::index(&config, corpus, out, *percentile),
        Command::Query {
            index,
            strategy,
            top_k,
            mode,
            out,
            question,
        } => commands::query(
            &config,
            cli.offline,
            index,
            strategy.as_deref(),
            *top_k,
            *mode == QueryMode::Rag,
            out.as_deref(),
            question,
        ),
        Command::ExportDpo { corpus, out } => commands::export_dpo(corpus, out),
        Command::Eval { samples, out } => commands::eval(&config, cli.offline, samples, out),
        Command::DpoDemo { out, steps } => commands::dpo_demo(&config, cli.seed, out, *steps),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
