//! Leave-one-out evaluation over externally supplied candidate lists.

pub mod metrics;
pub mod segment;
pub mod split;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{user_embedding, EmbeddingError, ProjectionHead, TextEmbedder};
use crate::index::{rerank, IndexError, PersonaIndex, UnknownItemMode};
use crate::pipeline::jsonl::read_jsonl;
use crate::pipeline::{build_user_profile, AlignmentRecord, AspectCache, ItemSummary, PipelineError, Provenance};
use crate::Scalar;

pub use metrics::{compute_metrics, mean_metrics, metrics_for_rank, target_rank, MetricsAtK, DEFAULT_KS};
pub use segment::{segment_members, segment_report, Segment, SegmentAxis, SegmentReport, SegmentSpec};
pub use split::{loo_split, SplitSet, UserSplit};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("leakage: {source_kind} record for user {user} item {item} is derived from a held-out interaction")]
    Leakage { source_kind: String, user: String, item: String },
    #[error("user {0} has an empty candidate list")]
    EmptyCandidates(String),
    #[error("invalid eval config: {0}")]
    Config(String),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// One first-stage candidate list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub user_id: String,
    pub candidates: Vec<String>,
}

pub fn load_candidates(path: &Path) -> Result<Vec<CandidateSet>, EvalError> {
    let sets: Vec<CandidateSet> = read_jsonl(path)?;
    if let Some(empty) = sets.iter().find(|s| s.candidates.is_empty()) {
        return Err(EvalError::EmptyCandidates(empty.user_id.clone()));
    }
    Ok(sets)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "k_max")]
pub enum Ablation {
    #[default]
    Full,
    /// Every item scored by its summary vector.
    SummaryOnly,
    /// Keep the first `k` personas of each item.
    PersonaCap(usize),
}

impl Ablation {
    pub fn label(&self) -> String {
        match self {
            Ablation::Full => "full".into(),
            Ablation::SummaryOnly => "summary_only".into(),
            Ablation::PersonaCap(k) => format!("persona_cap_{k}"),
        }
    }

    pub fn apply<T: Scalar>(&self, index: &PersonaIndex<T>) -> PersonaIndex<T> {
        match self {
            Ablation::Full => index.clone(),
            Ablation::SummaryOnly => index.summary_only(),
            Ablation::PersonaCap(k) => index.with_persona_cap(*k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    /// Most recent interactions used to encode the user.
    pub history_len: usize,
    pub segments: SegmentSpec,
    pub ablation: Ablation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { ks: DEFAULT_KS.to_vec(), history_len: 10, segments: SegmentSpec::default(), ablation: Ablation::Full }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(EvalError::Config("ks must be non-empty and positive".into()));
        }
        if self.history_len == 0 {
            return Err(EvalError::Config("history_len must be positive".into()));
        }
        if self.segments.percent > 50 {
            return Err(EvalError::Config("segment percent must be at most 50".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserResult {
    pub user_id: String,
    pub target: String,
    /// 1-based rank of the target after reranking; absent when the target
    /// was not among the candidates.
    pub rank: Option<usize>,
    pub candidates: usize,
    pub metrics: Vec<MetricsAtK>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mode: String,
    pub users: usize,
    pub metrics: Vec<MetricsAtK>,
    pub segments: Vec<SegmentReport>,
    /// Users in the split without a candidate row.
    pub missing_candidates: usize,
    /// Evaluated users whose target was not among their candidates.
    pub target_absent: usize,
    /// Candidates not present in the index, dropped before scoring.
    pub dropped_candidates: usize,
    /// Users with fewer than three interactions.
    pub excluded_users: usize,
    pub config: EvalConfig,
    pub per_user: Vec<UserResult>,
}

impl MetricReport {
    pub fn at(&self, k: usize) -> Option<&MetricsAtK> {
        self.metrics.iter().find(|m| m.k == k)
    }
}

/// Everything the scoring path may read for a user.
pub struct EvalInputs<'a> {
    pub summaries: &'a HashMap<String, ItemSummary>,
    pub aspects: &'a AspectCache,
    pub alignment: &'a [AlignmentRecord],
}

/// Fail when any aspect or alignment record touches a user's validation or
/// test interaction, by key or by provenance tag.
pub fn check_leakage(split: &SplitSet, inputs: &EvalInputs<'_>) -> Result<(), EvalError> {
    let held_out: HashSet<(&str, &str)> = split
        .users
        .iter()
        .flat_map(|(u, s)| [(u.as_str(), s.validation.item_id.as_str()), (u.as_str(), s.test.item_id.as_str())])
        .collect();
    let train_item: HashSet<(&str, &str)> =
        split.users.iter().flat_map(|(u, s)| s.train.iter().map(move |r| (u.as_str(), r.item_id.as_str()))).collect();
    let leaks = |user: &str, item: &str, tag: Option<Provenance>| {
        let tagged = matches!(tag, Some(Provenance::Test | Provenance::Validation));
        tagged || (held_out.contains(&(user, item)) && !train_item.contains(&(user, item)))
    };
    for t in inputs.aspects.values() {
        if leaks(&t.user_id, &t.item_id, t.split) {
            return Err(EvalError::Leakage {
                source_kind: "aspect".into(),
                user: t.user_id.clone(),
                item: t.item_id.clone(),
            });
        }
    }
    for r in inputs.alignment {
        if leaks(&r.user_id, &r.item_id, r.split) {
            return Err(EvalError::Leakage {
                source_kind: "alignment".into(),
                user: r.user_id.clone(),
                item: r.item_id.clone(),
            });
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn score_user<T: Scalar>(
    user: &str,
    s: &UserSplit,
    candidates: &[String],
    inputs: &EvalInputs<'_>,
    embedder: &dyn TextEmbedder,
    head: &ProjectionHead<T>,
    index: &PersonaIndex<T>,
    config: &EvalConfig,
) -> Result<(UserResult, usize), EvalError> {
    let history: Vec<_> =
        s.history().into_iter().filter_map(|r| inputs.summaries.get(&r.item_id).map(|sum| (r, sum.clone()))).collect();
    let profile = build_user_profile(user, &history, inputs.aspects, config.history_len)?;
    let u = user_embedding(&profile.entries, embedder, head)?;
    let out = rerank(&u, candidates, index, UnknownItemMode::Lenient)?;
    let ranked: Vec<String> = out.ranked.into_iter().map(|c| c.item_id).collect();
    let rank = target_rank(&ranked, &s.test.item_id);
    Ok((
        UserResult {
            user_id: user.to_string(),
            target: s.test.item_id.clone(),
            rank,
            candidates: candidates.len(),
            metrics: metrics_for_rank(rank, &config.ks),
        },
        out.dropped.len(),
    ))
}

/// Rerank each user's candidates with the (ablated) index and average the
/// single-target metrics. Users are processed in parallel; aggregation runs
/// in user-id order so the report is identical to a serial run.
pub fn evaluate<T: Scalar>(
    split: &SplitSet,
    candidates: &[CandidateSet],
    inputs: &EvalInputs<'_>,
    embedder: &dyn TextEmbedder,
    head: &ProjectionHead<T>,
    index: &PersonaIndex<T>,
    config: &EvalConfig,
) -> Result<MetricReport, EvalError> {
    config.validate()?;
    index.check_head(head)?;
    check_leakage(split, inputs)?;
    let index = config.ablation.apply(index);
    let by_user: HashMap<&str, &CandidateSet> = candidates.iter().map(|c| (c.user_id.as_str(), c)).collect();
    let work: Vec<(&String, &UserSplit, &CandidateSet)> =
        split.users.iter().filter_map(|(u, s)| by_user.get(u.as_str()).map(|c| (u, s, *c))).collect();
    let scored = work
        .par_iter()
        .map(|(u, s, c)| score_user(u, s, &c.candidates, inputs, embedder, head, &index, config))
        .collect::<Result<Vec<_>, _>>()?;
    let dropped = scored.iter().map(|(_, d)| d).sum();
    let per_user: Vec<UserResult> = scored.into_iter().map(|(r, _)| r).collect();
    Ok(assemble(split, per_user, config, config.ablation.label(), dropped, split.users.len() - work.len()))
}

fn assemble(
    split: &SplitSet,
    per_user: Vec<UserResult>,
    config: &EvalConfig,
    mode: String,
    dropped_candidates: usize,
    missing_candidates: usize,
) -> MetricReport {
    let metrics = mean_metrics(per_user.iter().map(|r| r.metrics.as_slice()), &config.ks);
    let segments = config
        .segments
        .axes
        .iter()
        .map(|&axis| {
            let counts: BTreeMap<String, usize> = match axis {
                SegmentAxis::User => split.user_train_counts(),
                SegmentAxis::Item => split.item_train_counts(),
            };
            segment_report(&per_user, &counts, axis, &config.segments, &config.ks)
        })
        .collect();
    MetricReport {
        mode,
        users: per_user.len(),
        metrics,
        segments,
        missing_candidates,
        target_absent: per_user.iter().filter(|r| r.rank.is_none()).count(),
        dropped_candidates,
        excluded_users: split.excluded.len(),
        config: config.clone(),
        per_user,
    }
}

/// Baseline that ranks each candidate list by a seeded random permutation.
pub fn random_baseline(split: &SplitSet, candidates: &[CandidateSet], config: &EvalConfig, seed: u64) -> MetricReport {
    let by_user: HashMap<&str, &CandidateSet> = candidates.iter().map(|c| (c.user_id.as_str(), c)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_user = Vec::new();
    for (u, s) in &split.users {
        let Some(c) = by_user.get(u.as_str()) else { continue };
        let mut ranked = c.candidates.clone();
        ranked.shuffle(&mut rng);
        let rank = target_rank(&ranked, &s.test.item_id);
        per_user.push(UserResult {
            user_id: u.clone(),
            target: s.test.item_id.clone(),
            rank,
            candidates: ranked.len(),
            metrics: metrics_for_rank(rank, &config.ks),
        });
    }
    let missing = split.users.len() - per_user.len();
    assemble(split, per_user, config, "random".into(), 0, missing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{AspectTuple, Review};

    fn review(u: &str, i: &str, t: i64) -> Review {
        Review { user_id: u.into(), item_id: i.into(), rating: 4, text: String::new(), timestamp: t }
    }

    #[test]
    fn leakage_guard_rejects_test_derived_records() {
        let split = loo_split(&[review("u", "a", 1), review("u", "b", 2), review("u", "c", 3)]);
        let summaries = HashMap::new();
        let mut aspects = AspectCache::new();
        let ok = EvalInputs { summaries: &summaries, aspects: &aspects, alignment: &[] };
        assert!(check_leakage(&split, &ok).is_ok());
        let tuple = AspectTuple { user_id: "u".into(), item_id: "c".into(), slots: Default::default(), split: None };
        aspects.insert(("u".into(), "c".into()), tuple);
        let bad = EvalInputs { summaries: &summaries, aspects: &aspects, alignment: &[] };
        assert!(matches!(check_leakage(&split, &bad), Err(EvalError::Leakage { .. })));
        let tagged = [AlignmentRecord {
            user_id: "x".into(),
            item_id: "y".into(),
            persona_index: 0,
            justification: "j".into(),
            split: Some(Provenance::Test),
        }];
        let none = AspectCache::new();
        let bad = EvalInputs { summaries: &summaries, aspects: &none, alignment: &tagged };
        assert!(check_leakage(&split, &bad).is_err());
    }

    #[test]
    fn ablation_labels() {
        assert_eq!(Ablation::SummaryOnly.label(), "summary_only");
        assert_eq!(Ablation::PersonaCap(3).label(), "persona_cap_3");
        let json = serde_json::to_string(&Ablation::PersonaCap(5)).unwrap();
        assert_eq!(json, r#"{"mode":"persona_cap","k_max":5}"#);
    }
}
