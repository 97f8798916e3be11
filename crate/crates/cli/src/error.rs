//! Error classification for exit codes.
//!
//! Every library error maps to one of four classes so scripts can branch on
//! the exit code: 2 config (bad flags, bad config values, misuse), 3 input
//! (malformed or missing data), 4 network (endpoints unreachable or
//! refusing), 5 internal (io failures and bugs).

use std::fmt;

use cverag_core::chunk::ChunkError;
use cverag_core::config::ConfigError;
use cverag_core::corpus::StoreError;
use cverag_core::dpo::DpoError;
use cverag_core::eval::EvalError;
use cverag_core::ingest::IngestError;
use cverag_core::llm::LlmError;
use cverag_core::retrieve::RetrieveError;

#[derive(Debug)]
pub enum AppError {
    Config(String),
    Input(String),
    Network(String),
    Internal(String),
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_NETWORK: i32 = 4;
pub const EXIT_INTERNAL: i32 = 5;

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => EXIT_CONFIG,
            AppError::Input(_) => EXIT_INPUT,
            AppError::Network(_) => EXIT_NETWORK,
            AppError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Config(m)
            | AppError::Input(m)
            | AppError::Network(m)
            | AppError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => AppError::Internal(e.to_string()),
            _ => AppError::Config(e.to_string()),
        }
    }
}

impl From<IngestError> for AppError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Window { .. } => AppError::Config(e.to_string()),
            IngestError::Network { .. } | IngestError::Status { .. } => {
                AppError::Network(e.to_string())
            }
            IngestError::Io { .. } => AppError::Internal(e.to_string()),
            _ => AppError::Input(e.to_string()),
        }
    }
}

impl From<StoreError> for AppError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io { .. } => AppError::Internal(e.to_string()),
            _ => AppError::Input(e.to_string()),
        }
    }
}

impl From<ChunkError> for AppError {
    fn from(e: ChunkError) -> Self {
        match e {
            ChunkError::Config { .. } => AppError::Config(e.to_string()),
            _ => AppError::Input(e.to_string()),
        }
    }
}

impl From<RetrieveError> for AppError {
    fn from(e: RetrieveError) -> Self {
        match e {
            RetrieveError::Config { .. } => AppError::Config(e.to_string()),
            RetrieveError::Io { .. } => AppError::Internal(e.to_string()),
            _ => AppError::Input(e.to_string()),
        }
    }
}

impl From<DpoError> for AppError {
    fn from(e: DpoError) -> Self {
        match e {
            DpoError::Config { .. } | DpoError::Template { .. } => AppError::Config(e.to_string()),
            DpoError::NonFinite { .. } | DpoError::Diverged { .. } => {
                AppError::Internal(e.to_string())
            }
            _ => AppError::Input(e.to_string()),
        }
    }
}

impl From<LlmError> for AppError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::Http { .. }
            | LlmError::Network { .. }
            | LlmError::RetriesExhausted { .. } => AppError::Network(e.to_string()),
            LlmError::MissingBinding { .. }
            | LlmError::BudgetExceeded { .. }
            | LlmError::EmptyMessages
            | LlmError::BadRole { .. }
            | LlmError::BadTemperature { .. } => AppError::Config(e.to_string()),
            LlmError::Io { .. } => AppError::Internal(e.to_string()),
            LlmError::ReplayMiss { .. } | LlmError::BadResponse { .. } => {
                AppError::Input(e.to_string())
            }
        }
    }
}

impl From<EvalError> for AppError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config { .. } | EvalError::NoSamples => AppError::Config(e.to_string()),
            EvalError::Io { .. } => AppError::Internal(e.to_string()),
            EvalError::Embed(inner) => AppError::Input(inner.to_string()),
            EvalError::Llm(inner) => AppError::from(inner),
            _ => AppError::Input(e.to_string()),
        }
    }
}

impl From<cverag_core::embed::EmbedError> for AppError {
    fn from(e: cverag_core::embed::EmbedError) -> Self {
        match e {
            cverag_core::embed::EmbedError::Endpoint { .. } => AppError::Network(e.to_string()),
            _ => AppError::Input(e.to_string()),
        }
    }
}

/// For the CLI's own filesystem work (manifests, report files).
pub fn io_err(path: &std::path::Path, source: std::io::Error) -> AppError {
    AppError::Internal(format!("io error on {}: {source}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes_map_to_distinct_exit_codes() {
        let errors = [
            AppError::Config("c".into()),
            AppError::Input("i".into()),
            AppError::Network("n".into()),
            AppError::Internal("x".into()),
        ];
        let codes: Vec<i32> = errors.iter().map(AppError::exit_code).collect();
        assert_eq!(codes, [2, 3, 4, 5]);
    }

    #[test]
    fn library_errors_land_in_the_documented_classes() {
        let window = IngestError::Window {
            detail: "bad".into(),
        };
        assert_eq!(AppError::from(window).exit_code(), EXIT_CONFIG);

        let miss = LlmError::ReplayMiss {
            digest: "d".into(),
            path: "p".into(),
        };
        assert_eq!(AppError::from(miss).exit_code(), EXIT_INPUT);

        let http = LlmError::Http {
            url: "u".into(),
            status: 500,
        };
        assert_eq!(AppError::from(http).exit_code(), EXIT_NETWORK);

        let diverged = DpoError::Diverged {
            step: 3,
            trace: vec![0.7],
        };
        assert_eq!(AppError::from(diverged).exit_code(), EXIT_INTERNAL);

        let empty = EvalError::NoSamples;
        assert_eq!(AppError::from(empty).exit_code(), EXIT_CONFIG);
    }
}
