//! Online reranking path. The engine owns the loaded index, head and stored
//! profiles and never holds an LLM provider; aspect extraction for newly
//! seen reviews runs on a separate queue and only affects later requests.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, RwLock};
use std::thread::{self, JoinHandle};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embedding::{user_embedding, ProjectionHead, TextEmbedder};
use crate::index::{explain, rerank, Explanation, IndexError, PersonaIndex, UnknownItemMode};
use crate::pipeline::{
    extract_aspects, AspectSchema, AspectTuple, LlmProvider, PipelineSettings, ProfileEntry, PromptTemplates,
    RetryPolicy, Review, StageContext, UserProfile,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OnlineError {
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("unknown items: {}", .0.join(", "))]
    UnknownItem(Vec<String>),
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("index not loaded")]
    NotReady,
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<IndexError> for OnlineError {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::UnknownItem(ids) => OnlineError::UnknownItem(ids),
            other => OnlineError::Internal(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryEntry {
    pub item_id: String,
    #[serde(default)]
    pub review: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RerankRequest {
    /// Resolves the stored profile when given.
    #[serde(default)]
    pub user_id: Option<String>,
    /// Inline interactions, most recent first. They are placed ahead of any
    /// stored profile entries.
    #[serde(default)]
    pub history: Vec<HistoryEntry>,
    pub candidates: Vec<String>,
    #[serde(default)]
    pub mode: UnknownItemMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub item_id: String,
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub persona_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explanation: Option<Explanation>,
    pub summary_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankResponse {
    pub items: Vec<RankedItem>,
    /// Candidates dropped in lenient mode.
    pub dropped: Vec<String>,
    pub build_id: String,
    pub head_hash: String,
    pub timing_us: u64,
}

/// Everything one generation of the service scores against.
pub struct EngineState {
    pub index: PersonaIndex<f32>,
    pub head: ProjectionHead<f32>,
    pub embedder: Arc<dyn TextEmbedder>,
    /// Item id to summary text.
    pub summaries: HashMap<String, String>,
    pub profiles: HashMap<String, UserProfile>,
    pub history_len: usize,
}

impl EngineState {
    pub fn new(
        index: PersonaIndex<f32>,
        head: ProjectionHead<f32>,
        embedder: Arc<dyn TextEmbedder>,
        summaries: HashMap<String, String>,
        profiles: HashMap<String, UserProfile>,
        history_len: usize,
    ) -> Result<Self, OnlineError> {
        index.check_head(&head).map_err(|e| OnlineError::Internal(e.to_string()))?;
        if embedder.dim() != index.dim() {
            return Err(OnlineError::Internal(format!(
                "embedder dimension {} does not match index dimension {}",
                embedder.dim(),
                index.dim()
            )));
        }
        Ok(Self { index, head, embedder, summaries, profiles, history_len })
    }
}

/// Aspect tuples produced for inline reviews, keyed by item and review hash.
#[derive(Default)]
pub struct AspectStore {
    map: RwLock<HashMap<(String, String), AspectTuple>>,
}

impl AspectStore {
    pub fn key(item_id: &str, review: &str) -> (String, String) {
        (item_id.to_string(), hex::encode(Sha256::digest(review.as_bytes())))
    }

    pub fn get(&self, item_id: &str, review: &str) -> Option<AspectTuple> {
        self.map.read().expect("aspect store lock").get(&Self::key(item_id, review)).cloned()
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("aspect store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn insert(&self, item_id: &str, review: &str, tuple: AspectTuple) {
        self.map.write().expect("aspect store lock").insert(Self::key(item_id, review), tuple);
    }
}

struct AspectJob {
    user_id: String,
    item_id: String,
    review: String,
}

/// Name of the aspect queue's worker thread.
pub const QUEUE_THREAD: &str = "aspect-queue";

/// Single-worker queue that extracts aspects for new reviews off the
/// request path.
pub struct AspectQueue {
    tx: Option<Sender<AspectJob>>,
    worker: Option<JoinHandle<()>>,
    enqueued: AtomicU64,
    completed: Arc<AtomicU64>,
}

impl AspectQueue {
    pub fn start(
        llm: Arc<dyn LlmProvider>,
        templates: PromptTemplates,
        schema: AspectSchema,
        settings: PipelineSettings,
        store: Arc<AspectStore>,
    ) -> Self {
        let (tx, rx): (Sender<AspectJob>, Receiver<AspectJob>) = mpsc::channel();
        let completed = Arc::new(AtomicU64::new(0));
        let done = Arc::clone(&completed);
        let worker = thread::Builder::new().name(QUEUE_THREAD.into()).spawn(move || {
            let ctx = StageContext {
                llm: llm.as_ref(),
                templates: &templates,
                retry: RetryPolicy::default(),
                settings: &settings,
            };
            for job in rx {
                if store.get(&job.item_id, &job.review).is_none() {
                    let review = Review {
                        user_id: job.user_id,
                        item_id: job.item_id.clone(),
                        rating: 5,
                        text: job.review.clone(),
                        timestamp: 0,
                    };
                    match extract_aspects(&review, &schema, &ctx) {
                        Ok(t) => store.insert(&job.item_id, &job.review, t),
                        Err(e) => log::warn!("aspect job for {} failed: {e}", job.item_id),
                    }
                }
                done.fetch_add(1, Ordering::SeqCst);
            }
        });
        let worker = worker.expect("spawn aspect queue worker");
        Self { tx: Some(tx), worker: Some(worker), enqueued: AtomicU64::new(0), completed }
    }

    fn push(&self, job: AspectJob) {
        if let Some(tx) = &self.tx {
            if tx.send(job).is_ok() {
                self.enqueued.fetch_add(1, Ordering::SeqCst);
            }
        }
    }

    pub fn enqueued(&self) -> u64 {
        self.enqueued.load(Ordering::SeqCst)
    }

    pub fn completed(&self) -> u64 {
        self.completed.load(Ordering::SeqCst)
    }

    /// Stop accepting jobs and wait for the worker to drain the queue.
    pub fn shutdown(mut self) {
        self.close();
    }

    fn close(&mut self) {
        self.tx.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for AspectQueue {
    fn drop(&mut self) {
        self.close();
    }
}

/// Shared, hot-swappable reranking engine.
pub struct RerankEngine {
    state: RwLock<Option<Arc<EngineState>>>,
    aspects: Arc<AspectStore>,
    queue: Option<AspectQueue>,
}

impl Default for RerankEngine {
    fn default() -> Self {
        Self::new()
    }
}

impl RerankEngine {
    /// An engine with nothing loaded; requests fail with `NotReady`.
    pub fn new() -> Self {
        Self { state: RwLock::new(None), aspects: Arc::new(AspectStore::default()), queue: None }
    }

    pub fn with_state(state: EngineState) -> Self {
        let engine = Self::new();
        engine.swap(state);
        engine
    }

    pub fn with_queue(mut self, queue: AspectQueue, store: Arc<AspectStore>) -> Self {
        self.queue = Some(queue);
        self.aspects = store;
        self
    }

    /// Replace the loaded state. In-flight requests finish on the state they
    /// started with.
    pub fn swap(&self, state: EngineState) {
        *self.state.write().expect("engine lock") = Some(Arc::new(state));
    }

    pub fn current(&self) -> Option<Arc<EngineState>> {
        self.state.read().expect("engine lock").clone()
    }

    pub fn is_ready(&self) -> bool {
        self.current().is_some()
    }

    pub fn aspects(&self) -> &AspectStore {
        &self.aspects
    }

    pub fn queue(&self) -> Option<&AspectQueue> {
        self.queue.as_ref()
    }

    pub fn personas(&self, item_id: &str) -> Result<Vec<crate::pipeline::PersonaRecord>, OnlineError> {
        let state = self.current().ok_or(OnlineError::NotReady)?;
        let entry = state.index.get(item_id).ok_or_else(|| OnlineError::UnknownItem(vec![item_id.to_string()]))?;
        entry
            .persona_payloads
            .iter()
            .map(|p| {
                crate::pipeline::parse_persona(p)
                    .ok_or_else(|| OnlineError::Internal(format!("unparseable persona payload for {item_id}")))
            })
            .collect()
    }

    fn profile_entries(&self, state: &EngineState, req: &RerankRequest) -> Result<Vec<ProfileEntry>, OnlineError> {
        let mut entries = Vec::new();
        for h in &req.history {
            let summary =
                state.summaries.get(&h.item_id).ok_or_else(|| OnlineError::UnknownItem(vec![h.item_id.clone()]))?;
            let review = h.review.as_deref().filter(|r| !r.trim().is_empty());
            let aspect = review.and_then(|r| self.aspects.get(&h.item_id, r));
            if let (Some(r), None, Some(q)) = (review, &aspect, &self.queue) {
                q.push(AspectJob {
                    user_id: req.user_id.clone().unwrap_or_default(),
                    item_id: h.item_id.clone(),
                    review: r.to_string(),
                });
            }
            entries.push(ProfileEntry { item_id: h.item_id.clone(), summary: summary.clone(), aspect, timestamp: 0 });
        }
        if let Some(user) = &req.user_id {
            let profile = state.profiles.get(user);
            if profile.is_none() && req.history.is_empty() {
                return Err(OnlineError::UnknownUser(user.clone()));
            }
            entries.extend(profile.into_iter().flat_map(|p| p.entries.iter().cloned()));
        }
        entries.truncate(state.history_len.max(1));
        Ok(entries)
    }

    pub fn rerank(&self, req: &RerankRequest) -> Result<RerankResponse, OnlineError> {
        let start = Instant::now();
        let state = self.current().ok_or(OnlineError::NotReady)?;
        if req.candidates.is_empty() {
            return Err(OnlineError::BadRequest("candidates must not be empty".into()));
        }
        if req.user_id.is_none() && req.history.is_empty() {
            return Err(OnlineError::BadRequest("either user_id or history is required".into()));
        }
        let entries = self.profile_entries(&state, req)?;
        if entries.is_empty() {
            return Err(OnlineError::BadRequest("user has no interactions".into()));
        }
        let user = user_embedding(&entries, state.embedder.as_ref(), &state.head)
            .map_err(|e| OnlineError::Internal(e.to_string()))?;
        let out = rerank(&user, &req.candidates, &state.index, req.mode)?;
        let items = out
            .ranked
            .iter()
            .map(|c| {
                Ok(RankedItem {
                    item_id: c.item_id.clone(),
                    score: c.score,
                    persona_index: c.best_persona_index,
                    explanation: explain(c, &state.index)?,
                    summary_only: c.best_persona_index.is_none(),
                })
            })
            .collect::<Result<Vec<_>, IndexError>>()?;
        Ok(RerankResponse {
            items,
            dropped: out.dropped,
            build_id: state.index.build_id().to_string(),
            head_hash: state.index.metadata().head_hash.clone(),
            timing_us: start.elapsed().as_micros() as u64,
        })
    }
}
