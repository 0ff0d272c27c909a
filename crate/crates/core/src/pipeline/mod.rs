//! Offline reasoning stages: item summaries, review aspect extraction, persona
//! generation, user profiles and judge-selected user/persona alignment.

pub mod jsonl;
pub mod llm;
pub mod mock;
pub mod payload;
pub mod prompts;
pub mod runner;
pub mod stages;
mod types;

use std::path::PathBuf;

use thiserror::Error;

pub use llm::{
    AnyProvider, CountingProvider, HttpProvider, HttpProviderConfig, LlmProvider, ProviderError, RetryPolicy,
};
pub use mock::{MockConfig, MockLlm};
pub use prompts::PromptTemplates;
pub use runner::{Holdout, PipelinePaths, StageReport};
pub use stages::{
    align_user_persona, build_alignment_dataset, build_user_profile, extract_aspects, filter_aspect_pool,
    generate_personas, parse_persona, serialize_persona, summarize_item, AspectCache, PersonaOutcome, PipelineSettings,
    StageContext,
};
pub use types::*;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("provider returned an empty completion for {key}")]
    EmptyCompletion { key: String },
    #[error("malformed completion: {0}")]
    MalformedCompletion(String),
    #[error("persona count {found} outside [{min}, {max}]")]
    PersonaCountOutOfRange { found: usize, min: usize, max: usize },
    #[error("malformed persona: {0}")]
    MalformedPersona(String),
    #[error("user {0} has no interactions")]
    EmptyHistory(String),
    #[error("item {0} has no personas")]
    EmptyPersonaSet(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("invalid aspect schema: {0}")]
    InvalidSchema(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing input file {}", .0.display())]
    MissingInput(PathBuf),
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("{}:{line}: {message}", path.display())]
    Json { path: PathBuf, line: usize, message: String },
    /// Non-fatal per-record skip carried through a stage.
    #[error("skipped: {0}")]
    Skip(String),
}
