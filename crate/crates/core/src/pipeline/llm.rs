//! LLM provider abstraction with a deterministic mock and an HTTP
//! chat-completion client.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::mock::MockLlm;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("provider transport error: {0}")]
    Transport(String),
    #[error("provider returned HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("provider response could not be read: {0}")]
    BadResponse(String),
    #[error("missing API key: environment variable {0} is not set")]
    MissingApiKey(String),
}

impl ProviderError {
    pub fn is_retriable(&self) -> bool {
        match self {
            ProviderError::Transport(_) | ProviderError::BadResponse(_) => true,
            ProviderError::Status { code, .. } => *code == 429 || *code >= 500,
            ProviderError::MissingApiKey(_) => false,
        }
    }
}

pub trait LlmProvider: Send + Sync {
    fn complete(&self, prompt: &str, template_id: &str) -> Result<String, ProviderError>;
}

impl<P: LlmProvider + ?Sized> LlmProvider for &P {
    fn complete(&self, prompt: &str, template_id: &str) -> Result<String, ProviderError> {
        (**self).complete(prompt, template_id)
    }
}

impl<P: LlmProvider + ?Sized> LlmProvider for Box<P> {
    fn complete(&self, prompt: &str, template_id: &str) -> Result<String, ProviderError> {
        (**self).complete(prompt, template_id)
    }
}

impl<P: LlmProvider + ?Sized> LlmProvider for std::sync::Arc<P> {
    fn complete(&self, prompt: &str, template_id: &str) -> Result<String, ProviderError> {
        (**self).complete(prompt, template_id)
    }
}

/// Counts calls made through it.
pub struct CountingProvider<P> {
    inner: P,
    calls: AtomicU64,
}

impl<P: LlmProvider> CountingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self { inner, calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: LlmProvider> LlmProvider for CountingProvider<P> {
    fn complete(&self, prompt: &str, template_id: &str) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(prompt, template_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub retry_limit: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { retry_limit: 3, backoff_ms: 250 }
    }
}

/// Calls `provider`, retrying retriable failures with linear backoff.
pub fn complete_with_retry(
    provider: &dyn LlmProvider,
    prompt: &str,
    template_id: &str,
    policy: RetryPolicy,
) -> Result<String, ProviderError> {
    let mut attempt = 0;
    loop {
        match provider.complete(prompt, template_id) {
            Ok(text) => return Ok(text),
            Err(e) if e.is_retriable() && attempt < policy.retry_limit => {
                attempt += 1;
                log::warn!("{template_id}: attempt {attempt} failed ({e}), retrying");
                if policy.backoff_ms > 0 {
                    thread::sleep(Duration::from_millis(policy.backoff_ms * u64::from(attempt)));
                }
            }
            Err(e) => return Err(e),
        }
    }
}

/// Counting semaphore bounding in-flight requests.
struct Gate {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self { permits: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut p = self.permits.lock().expect("gate lock");
        while *p == 0 {
            p = self.cv.wait(p).expect("gate lock");
        }
        *p -= 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.gate.permits.lock().expect("gate lock") += 1;
        self.gate.cv.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpProviderConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_concurrency")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub temperature: f64,
}

fn default_key_env() -> String {
    "LLM_API_KEY".into()
}

fn default_timeout() -> u64 {
    60
}

pub(crate) fn default_concurrency() -> usize {
    8
}

/// OpenAI-compatible `POST {base_url}/chat/completions` client.
pub struct HttpProvider {
    config: HttpProviderConfig,
    api_key: String,
    client: reqwest::blocking::Client,
    gate: Gate,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

impl HttpProvider {
    /// Reads the API key from the configured environment variable.
    pub fn new(config: HttpProviderConfig) -> Result<Self, ProviderError> {
        let api_key =
            std::env::var(&config.api_key_env).map_err(|_| ProviderError::MissingApiKey(config.api_key_env.clone()))?;
        Self::with_key(config, api_key)
    }

    pub fn with_key(config: HttpProviderConfig, api_key: String) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let gate = Gate::new(config.max_in_flight);
        Ok(Self { config, api_key, client, gate })
    }
}

impl LlmProvider for HttpProvider {
    fn complete(&self, prompt: &str, _template_id: &str) -> Result<String, ProviderError> {
        let _permit = self.gate.acquire();
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = serde_json::json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [{ "role": "user", "content": prompt }],
        });
        let resp = self
            .client
            .post(url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(ProviderError::Status { code: status.as_u16(), body });
        }
        let parsed: ChatResponse = resp.json().map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        Ok(parsed.choices.into_iter().next().and_then(|c| c.message.content).unwrap_or_default())
    }
}

/// Provider selected by configuration.
pub enum AnyProvider {
    Mock(MockLlm),
    Http(HttpProvider),
}

impl LlmProvider for AnyProvider {
    fn complete(&self, prompt: &str, template_id: &str) -> Result<String, ProviderError> {
        match self {
            AnyProvider::Mock(m) => m.complete(prompt, template_id),
            AnyProvider::Http(h) => h.complete(prompt, template_id),
        }
    }
}
