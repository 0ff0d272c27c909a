//! Persona-profiled item index: build, persistence, max-similarity scoring,
//! reranking and explanations.

mod format;
mod latency;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{
    dot, encode_persona, encode_text, EmbeddingError, EmbeddingVector, ProjectionHead, TextEmbedder,
};
use crate::pipeline::{parse_persona, serialize_persona, ItemSummary, PersonaSet};
use crate::Scalar;

pub use format::{INDEX_MAGIC, INDEX_VERSION};
pub use latency::{measure_latency, measure_latency_with, LatencyReport, LatencyWorkload, SeriesPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("item {0} has personas but no summary")]
    MissingSummary(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("index file truncated at byte {offset}")]
    Truncated { offset: u64 },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("unknown items: {}", .0.join(", "))]
    UnknownItem(Vec<String>),
    #[error("stale persona index: scored against {scored}, current is {current}")]
    StalePersonaIndex { scored: String, current: String },
    #[error("index/head mismatch: index built with head {index}, loaded head is {head}")]
    HeadMismatch { index: String, head: String },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry<T> {
    pub item_id: String,
    /// Unit vectors, in persona order.
    pub persona_vectors: Vec<EmbeddingVector<T>>,
    /// Serialized persona texts, index aligned with `persona_vectors`.
    pub persona_payloads: Vec<String>,
    pub summary_vector: EmbeddingVector<T>,
}

impl<T> IndexEntry<T> {
    pub fn is_summary_only(&self) -> bool {
        self.persona_vectors.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMetadata {
    pub embedder_id: String,
    /// Content hash of the head used for every vector in the index.
    pub head_hash: String,
    /// Taken from `SOURCE_DATE_EPOCH` when set, otherwise 0, so rebuilds
    /// are byte-identical.
    pub created_unix: u64,
}

/// Immutable after construction. Entries are kept in item-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonaIndex<T> {
    dim: usize,
    entries: Vec<IndexEntry<T>>,
    lookup: HashMap<String, usize>,
    metadata: IndexMetadata,
    build_id: String,
}

impl<T: Scalar> PersonaIndex<T> {
    pub fn from_entries(
        dim: usize,
        mut entries: Vec<IndexEntry<T>>,
        metadata: IndexMetadata,
    ) -> Result<Self, IndexError> {
        entries.sort_by(|a, b| a.item_id.cmp(&b.item_id));
        let mut lookup = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if lookup.insert(e.item_id.clone(), i).is_some() {
                return Err(IndexError::Format { offset: 0, message: format!("duplicate item {}", e.item_id) });
            }
            if e.persona_vectors.len() != e.persona_payloads.len() {
                return Err(IndexError::DimensionMismatch {
                    expected: e.persona_vectors.len(),
                    found: e.persona_payloads.len(),
                });
            }
            for v in e.persona_vectors.iter().chain(std::iter::once(&e.summary_vector)) {
                if v.dim() != dim {
                    return Err(IndexError::DimensionMismatch { expected: dim, found: v.dim() });
                }
            }
        }
        let mut index = Self { dim, entries, lookup, metadata, build_id: String::new() };
        index.build_id = format::build_id(&index.to_bytes());
        Ok(index)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry<T>] {
        &self.entries
    }

    pub fn get(&self, item_id: &str) -> Option<&IndexEntry<T>> {
        self.lookup.get(item_id).map(|&i| &self.entries[i])
    }

    pub fn metadata(&self) -> &IndexMetadata {
        &self.metadata
    }

    /// Content hash of the serialized index.
    pub fn build_id(&self) -> &str {
        &self.build_id
    }

    pub fn persona_count(&self) -> usize {
        self.entries.iter().map(|e| e.persona_vectors.len()).sum()
    }

    /// Refuse to score with a head other than the one the index was built with.
    pub fn check_head(&self, head: &ProjectionHead<impl Scalar>) -> Result<(), IndexError> {
        let hash = head.content_hash();
        if hash != self.metadata.head_hash {
            return Err(IndexError::HeadMismatch { index: self.metadata.head_hash.clone(), head: hash });
        }
        Ok(())
    }

    /// Copy keeping only the first `k` personas of each item.
    pub fn with_persona_cap(&self, k: usize) -> Self {
        self.map_entries(|e| {
            e.persona_vectors.truncate(k);
            e.persona_payloads.truncate(k);
        })
    }

    /// Copy with every persona removed, so all items score by summary.
    pub fn summary_only(&self) -> Self {
        self.with_persona_cap(0)
    }

    fn map_entries(&self, f: impl Fn(&mut IndexEntry<T>)) -> Self {
        let mut entries = self.entries.clone();
        entries.iter_mut().for_each(f);
        Self::from_entries(self.dim, entries, self.metadata.clone()).expect("entries already validated")
    }
}

fn created_unix() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()).unwrap_or(0)
}

/// Encode every persona and summary once. Items with a summary but no persona
/// set (or an empty one) are indexed summary-only.
pub fn build_index<T: Scalar>(
    persona_sets: &[PersonaSet],
    summaries: &[ItemSummary],
    embedder: &dyn TextEmbedder,
    head: &ProjectionHead<T>,
) -> Result<PersonaIndex<T>, IndexError> {
    if embedder.dim() != head.dim() {
        return Err(IndexError::DimensionMismatch { expected: head.dim(), found: embedder.dim() });
    }
    let summary_ids: HashSet<&str> = summaries.iter().map(|s| s.item_id.as_str()).collect();
    if let Some(orphan) = persona_sets.iter().find(|p| !summary_ids.contains(p.item_id.as_str())) {
        return Err(IndexError::MissingSummary(orphan.item_id.clone()));
    }
    let sets: HashMap<&str, &PersonaSet> = persona_sets.iter().map(|p| (p.item_id.as_str(), p)).collect();
    let entries = summaries
        .iter()
        .map(|s| {
            let personas = sets.get(s.item_id.as_str()).map(|p| p.personas.as_slice()).unwrap_or(&[]);
            Ok(IndexEntry {
                item_id: s.item_id.clone(),
                persona_vectors: personas
                    .iter()
                    .map(|p| encode_persona(p, embedder, head))
                    .collect::<Result<_, _>>()?,
                persona_payloads: personas.iter().map(serialize_persona).collect(),
                summary_vector: encode_text(&s.text, embedder, head)?,
            })
        })
        .collect::<Result<Vec<_>, IndexError>>()?;
    let metadata =
        IndexMetadata { embedder_id: embedder.id(), head_hash: head.content_hash(), created_unix: created_unix() };
    PersonaIndex::from_entries(head.dim(), entries, metadata)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub item_id: String,
    pub score: f64,
    /// Absent when the item was scored by its summary.
    pub best_persona_index: Option<usize>,
    pub original_position: usize,
    /// Build id of the index that produced the score.
    pub build_id: String,
}

/// Maximum similarity over the entry's personas, lowest index on exact ties;
/// the summary vector when there are none. `user` must be unit length, and
/// similarity is the dot product of unit vectors.
pub fn score_candidate<T: Scalar>(user: &[T], entry: &IndexEntry<T>) -> Result<(T, Option<usize>), IndexError> {
    if user.len() != entry.summary_vector.dim() {
        return Err(IndexError::DimensionMismatch { expected: entry.summary_vector.dim(), found: user.len() });
    }
    let mut best: Option<(T, usize)> = None;
    for (k, p) in entry.persona_vectors.iter().enumerate() {
        let s = dot(user, p);
        if best.is_none_or(|(b, _)| s > b) {
            best = Some((s, k));
        }
    }
    Ok(match best {
        Some((s, k)) => (s, Some(k)),
        None => (dot(user, &entry.summary_vector), None),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownItemMode {
    /// Any unknown candidate fails the request.
    #[default]
    Strict,
    /// Unknown candidates are dropped and reported.
    Lenient,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RerankOutcome {
    pub ranked: Vec<ScoredCandidate>,
    pub dropped: Vec<String>,
}

/// Score every candidate and sort by descending score. The sort is stable,
/// so equal scores keep their input order.
pub fn rerank<T: Scalar>(
    user: &[T],
    candidates: &[String],
    index: &PersonaIndex<T>,
    mode: UnknownItemMode,
) -> Result<RerankOutcome, IndexError> {
    let mut out = RerankOutcome { ranked: Vec::with_capacity(candidates.len()), dropped: Vec::new() };
    for (pos, id) in candidates.iter().enumerate() {
        let Some(entry) = index.get(id) else {
            out.dropped.push(id.clone());
            continue;
        };
        let (score, best) = score_candidate(user, entry)?;
        out.ranked.push(ScoredCandidate {
            item_id: id.clone(),
            score: score.as_f64(),
            best_persona_index: best,
            original_position: pos,
            build_id: index.build_id.clone(),
        });
    }
    if mode == UnknownItemMode::Strict && !out.dropped.is_empty() {
        return Err(IndexError::UnknownItem(out.dropped));
    }
    out.ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Explanation {
    pub item_id: String,
    pub name: String,
    pub description: String,
    pub rationale: String,
}

/// The winning persona's fields, or `None` for summary-scored candidates.
pub fn explain<T: Scalar>(
    scored: &ScoredCandidate,
    index: &PersonaIndex<T>,
) -> Result<Option<Explanation>, IndexError> {
    if scored.build_id != index.build_id {
        return Err(IndexError::StalePersonaIndex { scored: scored.build_id.clone(), current: index.build_id.clone() });
    }
    let Some(k) = scored.best_persona_index else { return Ok(None) };
    let entry = index.get(&scored.item_id).ok_or_else(|| IndexError::UnknownItem(vec![scored.item_id.clone()]))?;
    let payload = entry.persona_payloads.get(k).ok_or_else(|| IndexError::Format {
        offset: 0,
        message: format!("persona {k} out of range for {}", scored.item_id),
    })?;
    let p = parse_persona(payload).ok_or_else(|| IndexError::Format {
        offset: 0,
        message: format!("unparseable persona payload for {}", scored.item_id),
    })?;
    Ok(Some(Explanation {
        item_id: scored.item_id.clone(),
        name: p.name,
        description: p.description,
        rationale: p.rationale,
    }))
}
