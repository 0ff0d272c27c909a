//! Run configuration loaded from TOML. Every section and field is optional
//! and falls back to the defaults below; unknown keys are rejected. Provider
//! credentials are never read from the file, only the name of the
//! environment variable that holds them.
//!
//! ```toml
//! seed = 0
//! holdout = "leave_one_out"
//!
//! [paths]
//! data_dir = "data"             # items.jsonl, reviews.jsonl, candidates.jsonl
//! out_dir = "out"               # stage outputs, head, index, reports
//!
//! [pipeline]
//! summary_max_chars = 1200
//! max_null_fraction = 0.75
//! min_personas = 2
//! max_personas = 7
//! completion_retry_limit = 3
//! history_len = 10
//! concurrency = 8
//!
//! [embedder]
//! kind = "hash"                 # or "http" with an [embedder.http] table
//! dim = 64
//!
//! [training]
//! tau = 0.05
//! batch_size = 64
//! epochs = 10
//! learning_rate = 0.05
//! gamma = 0.8
//!
//! [eval]
//! ks = [5, 10, 20]
//!
//! [service]
//! host = "127.0.0.1"
//! port = 8080
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{HttpEmbedderConfig, TrainingConfig, DEFAULT_HASH_DIM};
use crate::eval::EvalConfig;
use crate::index::LatencyWorkload;
use crate::pipeline::{AspectSchema, Holdout, HttpProviderConfig, MockConfig, PipelineSettings, RetryPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Directory of prompt template overrides (`summarize.txt` and so on).
    pub prompts_dir: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { data_dir: "data".into(), out_dir: "out".into(), prompts_dir: None }
    }
}

impl PathsConfig {
    pub fn candidates(&self) -> PathBuf {
        self.data_dir.join("candidates.jsonl")
    }

    pub fn head(&self) -> PathBuf {
        self.out_dir.join("head.p4rh")
    }

    pub fn index(&self) -> PathBuf {
        self.out_dir.join("index.p4rx")
    }

    pub fn report(&self) -> PathBuf {
        self.out_dir.join("report.json")
    }

    pub fn latency(&self) -> PathBuf {
        self.out_dir.join("latency.json")
    }

    pub fn training_log(&self) -> PathBuf {
        self.out_dir.join("training_log.json")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    Hash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    /// Hash embedder dimension.
    pub dim: usize,
    pub http: Option<HttpEmbedderConfig>,
    /// Where the HTTP embedder caches vectors; unset disables the cache.
    pub cache_dir: Option<PathBuf>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self { kind: EmbedderKind::Hash, dim: DEFAULT_HASH_DIM, http: None, cache_dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { host: "127.0.0.1".into(), port: 8080 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub holdout: Holdout,
    pub paths: PathsConfig,
    /// Chat-completion endpoint; required unless the mock provider is used.
    pub provider: Option<HttpProviderConfig>,
    pub retry: RetryPolicy,
    pub mock: MockConfig,
    pub schema: AspectSchema,
    pub pipeline: PipelineSettings,
    pub embedder: EmbedderConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
    pub bench: LatencyWorkload,
    pub service: ServiceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            holdout: Holdout::LeaveOneOut,
            paths: PathsConfig::default(),
            provider: None,
            retry: RetryPolicy::default(),
            mock: MockConfig::default(),
            schema: AspectSchema::default(),
            pipeline: PipelineSettings::default(),
            embedder: EmbedderConfig::default(),
            training: TrainingConfig::default(),
            eval: EvalConfig::default(),
            bench: LatencyWorkload::default(),
            service: ServiceConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        let p = &self.pipeline;
        if !(0.0..=1.0).contains(&p.max_null_fraction) {
            return invalid(format!("pipeline.max_null_fraction must be in [0, 1], got {}", p.max_null_fraction));
        }
        if p.min_personas == 0 || p.min_personas > p.max_personas {
            return invalid(format!("pipeline persona range [{}, {}] is empty", p.min_personas, p.max_personas));
        }
        if p.summary_max_chars == 0 || p.history_len == 0 || p.concurrency == 0 {
            return invalid("pipeline.summary_max_chars, history_len and concurrency must be positive".into());
        }
        AspectSchema::new(self.schema.slots.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.embedder.dim == 0 {
            return invalid("embedder.dim must be positive".into());
        }
        if self.embedder.kind == EmbedderKind::Http && self.embedder.http.is_none() {
            return invalid("embedder.kind = \"http\" needs an [embedder.http] table".into());
        }
        self.training.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.eval.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("sed = 1").is_err());
        assert!(RunConfig::from_toml_str("[training]\ntemperature = 0.1").is_err());
    }

    #[test]
    fn api_keys_cannot_live_in_the_file() {
        let text = "[provider]\nbase_url = \"http://x\"\nmodel = \"m\"\napi_key = \"secret\"";
        assert!(RunConfig::from_toml_str(text).is_err());
        let text = "[provider]\nbase_url = \"http://x\"\nmodel = \"m\"\napi_key_env = \"MY_KEY\"";
        assert_eq!(RunConfig::from_toml_str(text).unwrap().provider.unwrap().api_key_env, "MY_KEY");
    }

    #[test]
    fn values_are_validated() {
        assert!(RunConfig::from_toml_str("[training]\ntau = 0.0").is_err());
        assert!(RunConfig::from_toml_str("[pipeline]\nmin_personas = 8").is_err());
        let cfg = RunConfig::from_toml_str("[training]\ngamma = 0.5\n[eval]\nks = [1, 3]").unwrap();
        assert_eq!(cfg.training.gamma, 0.5);
        assert_eq!(cfg.eval.ks, [1, 3]);
    }
}
