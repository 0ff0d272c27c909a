//! Text embedders: a deterministic feature-hashing embedder, an HTTP client for
//! an OpenAI-compatible embedding service, and an on-disk embedding cache.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::RwLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EmbeddingError, EmbeddingVector};
use crate::text::{fnv1a, tokenize};
use crate::Scalar;

pub const DEFAULT_HASH_DIM: usize = 64;

/// Frozen text encoder. Implementations return raw `f64` values; callers pick
/// the working precision through [`embed`].
pub trait TextEmbedder: Send + Sync {
    fn dim(&self) -> usize;

    /// Stable identifier recorded in index metadata.
    fn id(&self) -> String;

    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, EmbeddingError>;
}

/// Embed `text` and convert to the working scalar type.
pub fn embed<T: Scalar>(embedder: &dyn TextEmbedder, text: &str) -> Result<EmbeddingVector<T>, EmbeddingError> {
    let raw = embedder.embed_raw(text)?;
    if raw.len() != embedder.dim() {
        return Err(EmbeddingError::DimensionMismatch { expected: embedder.dim(), found: raw.len() });
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(EmbeddingError::NonFinite);
    }
    Ok(EmbeddingVector::new(raw.into_iter().map(T::of).collect()))
}

/// Signed feature hashing of token unigrams and adjacent-token bigrams,
/// L2-normalized.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    fn add_feature(&self, acc: &mut [f64], feature: &str) {
        let h = fnv1a(feature.as_bytes());
        let bucket = (h % self.dim as u64) as usize;
        let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
        acc[bucket] += sign;
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_HASH_DIM)
    }
}

impl TextEmbedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn id(&self) -> String {
        format!("hash-ngram-v1/d{}", self.dim)
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, EmbeddingError> {
        let tokens = tokenize(text);
        let mut acc = vec![0.0f64; self.dim];
        for t in &tokens {
            self.add_feature(&mut acc, t);
        }
        for pair in tokens.windows(2) {
            self.add_feature(&mut acc, &format!("{} {}", pair[0], pair[1]));
        }
        let n = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            acc.iter_mut().for_each(|v| *v /= n);
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HttpEmbedderConfig {
    pub base_url: String,
    pub model: String,
    pub dim: usize,
    /// Name of the environment variable holding the API key, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    30
}

/// Client for `POST {base_url}/embeddings` in the OpenAI wire format.
pub struct HttpEmbedder {
    config: HttpEmbedderConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl HttpEmbedder {
    pub fn new(config: HttpEmbedderConfig) -> Result<Self, EmbeddingError> {
        let api_key = config.api_key_env.as_deref().and_then(|name| std::env::var(name).ok());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| EmbeddingError::Transport(e.to_string()))?;
        Ok(Self { config, api_key, client })
    }
}

impl TextEmbedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn id(&self) -> String {
        format!("http/{}/d{}", self.config.model, self.config.dim)
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, EmbeddingError> {
        let url = format!("{}/embeddings", self.config.base_url.trim_end_matches('/'));
        let body = serde_json::json!({ "model": self.config.model, "input": [text] });
        let mut req = self.client.post(url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| EmbeddingError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(EmbeddingError::Transport(format!("embedding service returned {status}")));
        }
        let parsed: EmbeddingResponse =
            resp.json().map_err(|e| EmbeddingError::Transport(format!("bad embedding response: {e}")))?;
        parsed
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| EmbeddingError::Transport("empty embedding response".into()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    key: String,
    offset: u64,
    dim: usize,
}

/// Memoizing wrapper persisted as `embeddings.bin` (little-endian `f64`
/// rows) plus `embeddings.manifest.jsonl` mapping text digests to offsets.
pub struct CachedEmbedder<'a> {
    inner: &'a dyn TextEmbedder,
    entries: RwLock<HashMap<String, Vec<f64>>>,
}

impl<'a> CachedEmbedder<'a> {
    pub fn new(inner: &'a dyn TextEmbedder) -> Self {
        Self { inner, entries: RwLock::new(HashMap::new()) }
    }

    pub fn key(text: &str) -> String {
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Load a previously saved cache from `dir`. Missing files yield an empty cache.
    pub fn load(inner: &'a dyn TextEmbedder, dir: &Path) -> Result<Self, EmbeddingError> {
        let cache = Self::new(inner);
        let manifest = dir.join("embeddings.manifest.jsonl");
        let bin = dir.join("embeddings.bin");
        if !manifest.exists() || !bin.exists() {
            return Ok(cache);
        }
        let mut bytes = Vec::new();
        File::open(&bin)?.read_to_end(&mut bytes)?;
        let mut entries = HashMap::new();
        for line in BufReader::new(File::open(&manifest)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: ManifestRow = serde_json::from_str(&line)
                .map_err(|e| EmbeddingError::Format { offset: 0, message: e.to_string() })?;
            if row.dim != inner.dim() {
                return Err(EmbeddingError::DimensionMismatch { expected: inner.dim(), found: row.dim });
            }
            let start = row.offset as usize;
            let end = start + row.dim * 8;
            let slice = bytes.get(start..end).ok_or(EmbeddingError::Truncated { offset: row.offset })?;
            let values =
                slice.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
            entries.insert(row.key, values);
        }
        *cache.entries.write().expect("cache lock") = entries;
        Ok(cache)
    }

    /// Write the cache to `dir`, rows sorted by key.
    pub fn save(&self, dir: &Path) -> Result<(), EmbeddingError> {
        fs::create_dir_all(dir)?;
        let entries = self.entries.read().expect("cache lock");
        let mut keys: Vec<&String> = entries.keys().collect();
        keys.sort();
        let mut bin = BufWriter::new(File::create(dir.join("embeddings.bin"))?);
        let mut manifest = BufWriter::new(File::create(dir.join("embeddings.manifest.jsonl"))?);
        let mut offset = 0u64;
        for key in keys {
            let values = &entries[key];
            for v in values {
                bin.write_all(&v.to_le_bytes())?;
            }
            let row = ManifestRow { key: key.clone(), offset, dim: values.len() };
            writeln!(manifest, "{}", serde_json::to_string(&row).expect("manifest row"))?;
            offset += (values.len() * 8) as u64;
        }
        bin.flush()?;
        manifest.flush()?;
        Ok(())
    }
}

impl TextEmbedder for CachedEmbedder<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn id(&self) -> String {
        self.inner.id()
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, EmbeddingError> {
        let key = Self::key(text);
        if let Some(v) = self.entries.read().expect("cache lock").get(&key) {
            return Ok(v.clone());
        }
        let v = self.inner.embed_raw(text)?;
        self.entries.write().expect("cache lock").insert(key, v.clone());
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_embedder_is_pure_and_unit() {
        let e = HashEmbedder::default();
        let a = e.embed_raw("dark gothic retelling").unwrap();
        let b = e.embed_raw("dark gothic retelling").unwrap();
        assert_eq!(a, b);
        let n: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
        assert_eq!(a.len(), DEFAULT_HASH_DIM);
    }

    #[test]
    fn empty_text_embeds_to_zero() {
        let e = HashEmbedder::new(8);
        assert!(e.embed_raw("").unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_token_has_signal() {
        let e = HashEmbedder::new(16);
        assert!(e.embed_raw("x").unwrap().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn word_order_changes_bigrams() {
        let e = HashEmbedder::new(256);
        assert_ne!(e.embed_raw("red wine").unwrap(), e.embed_raw("wine red").unwrap());
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let base = HashEmbedder::new(8);
        let cache = CachedEmbedder::new(&base);
        let a = cache.embed_raw("alpha beta").unwrap();
        cache.embed_raw("gamma").unwrap();
        cache.save(dir.path()).unwrap();
        let loaded = CachedEmbedder::load(&base, dir.path()).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.entries.read().unwrap()[&CachedEmbedder::key("alpha beta")], a);
    }
}
