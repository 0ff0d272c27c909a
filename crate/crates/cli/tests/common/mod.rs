#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use clap::Parser;
use personarank::config::RunConfig;
use personarank::online::QUEUE_THREAD;
use personarank::pipeline::{LlmProvider, MockConfig, MockLlm, ProviderError};
use personarank_cli::args::Cli;
use personarank_cli::commands::{resolve_config, run};
use personarank_cli::error::CliError;
use serde_json::Value;
use tempfile::TempDir;

/// A temporary data and artifact directory driven through the CLI library.
pub struct Workspace {
    pub dir: TempDir,
}

impl Workspace {
    pub fn new() -> Self {
        Self { dir: TempDir::new().unwrap() }
    }

    /// Synthetic corpus, mock pipeline, trained head and index.
    pub fn built(items: usize, reviews: usize) -> Self {
        let ws = Self::new();
        ws.run(&["synth", "--items", &items.to_string(), "--reviews", &reviews.to_string()]).unwrap();
        ws.run(&["pipeline", "all", "--mock-llm"]).unwrap();
        ws.run(&["train"]).unwrap();
        ws.run(&["index", "build"]).unwrap();
        ws
    }

    pub fn data(&self) -> PathBuf {
        self.dir.path().join("data")
    }

    pub fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    pub fn args(&self, args: &[&str]) -> Vec<String> {
        let mut v: Vec<String> = vec!["personarank".into()];
        v.extend(args.iter().map(|s| s.to_string()));
        v.extend(["--data".into(), self.data().display().to_string()]);
        v.extend(["--output".into(), self.out().display().to_string()]);
        v
    }

    /// Effective config; `args` default to a subcommand that adds no overrides.
    pub fn config(&self, args: &[&str]) -> RunConfig {
        let args = if args.is_empty() { &["index", "inspect"][..] } else { args };
        resolve_config(&Cli::try_parse_from(self.args(args)).unwrap()).unwrap()
    }

    pub fn run(&self, args: &[&str]) -> Result<Value, CliError> {
        let cli = Cli::try_parse_from(self.args(args)).unwrap();
        let cfg = resolve_config(&cli)?;
        run(&cli, &cfg)
    }
}

/// Mock provider that counts calls made outside the aspect queue's worker.
pub struct ThreadCountingLlm {
    inner: MockLlm,
    pub hot_path: AtomicU64,
    pub queued: AtomicU64,
    pub delay: std::time::Duration,
}

impl ThreadCountingLlm {
    pub fn new(delay_ms: u64) -> Arc<Self> {
        Arc::new(Self {
            inner: MockLlm::new(MockConfig::default()),
            hot_path: AtomicU64::new(0),
            queued: AtomicU64::new(0),
            delay: std::time::Duration::from_millis(delay_ms),
        })
    }
}

impl LlmProvider for ThreadCountingLlm {
    fn complete(&self, prompt: &str, template_id: &str) -> Result<String, ProviderError> {
        if std::thread::current().name() == Some(QUEUE_THREAD) {
            self.queued.fetch_add(1, Ordering::SeqCst);
        } else {
            self.hot_path.fetch_add(1, Ordering::SeqCst);
        }
        std::thread::sleep(self.delay);
        self.inner.complete(prompt, template_id)
    }
}
