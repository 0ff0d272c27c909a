use std::path::PathBuf;

use personarank::config::ConfigError;
use personarank::embedding::EmbeddingError;
use personarank::eval::EvalError;
use personarank::index::IndexError;
use personarank::pipeline::{PipelineError, ProviderError};
use serde_json::{json, Value};
use thiserror::Error;

pub const EXIT_FAILURE: i32 = 1;
/// Configuration problems and missing or malformed inputs.
pub const EXIT_CONFIG: i32 = 2;
/// Provider failures that survived the retry policy.
pub const EXIT_PROVIDER: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("missing input file {}", .0.display())]
    MissingInput(PathBuf),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("service error: {0}")]
    Service(String),
}

fn provider_code(e: &ProviderError) -> i32 {
    match e {
        ProviderError::MissingApiKey(_) => EXIT_CONFIG,
        _ => EXIT_PROVIDER,
    }
}

fn pipeline_code(e: &PipelineError) -> i32 {
    use PipelineError::*;
    match e {
        Provider(p) => provider_code(p),
        EmptyCompletion { .. } | MalformedCompletion(_) | PersonaCountOutOfRange { .. } | MalformedPersona(_) => {
            EXIT_PROVIDER
        }
        MissingInput(_) | Config(_) | InvalidSchema(_) | InvalidRecord(_) | Json { .. } => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

fn embedding_code(e: &EmbeddingError) -> i32 {
    use EmbeddingError::*;
    match e {
        Transport(_) => EXIT_PROVIDER,
        DimensionMismatch { .. } | Format { .. } | Truncated { .. } | UnresolvedReference(_) | InvalidConfig(_) => {
            EXIT_CONFIG
        }
        _ => EXIT_FAILURE,
    }
}

fn index_code(e: &IndexError) -> i32 {
    use IndexError::*;
    match e {
        Embedding(inner) => embedding_code(inner),
        MissingSummary(_)
        | DimensionMismatch { .. }
        | Format { .. }
        | Truncated { .. }
        | Io { .. }
        | UnknownItem(_)
        | HeadMismatch { .. } => EXIT_CONFIG,
        StalePersonaIndex { .. } => EXIT_FAILURE,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::MissingInput(_) => EXIT_CONFIG,
            CliError::Pipeline(e) => pipeline_code(e),
            CliError::Embedding(e) => embedding_code(e),
            CliError::Index(e) => index_code(e),
            CliError::Eval(e) => match e {
                EvalError::Index(i) => index_code(i),
                EvalError::Embedding(i) => embedding_code(i),
                EvalError::Pipeline(i) => pipeline_code(i),
                _ => EXIT_CONFIG,
            },
            CliError::Io { .. } | CliError::Service(_) => EXIT_FAILURE,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            EXIT_CONFIG => "config",
            EXIT_PROVIDER => "provider",
            _ => "runtime",
        }
    }

    /// The JSON object written to stderr.
    pub fn to_json(&self) -> Value {
        let mut v = json!({
            "error": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        });
        let path = match self {
            CliError::MissingInput(p) | CliError::Io { path: p, .. } => Some(p.clone()),
            CliError::Pipeline(PipelineError::MissingInput(p)) => Some(p.clone()),
            _ => None,
        };
        if let Some(p) = path {
            v["path"] = json!(p.display().to_string());
        }
        v
    }
}
