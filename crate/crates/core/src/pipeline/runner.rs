//! File-level stage runners. Each stage reads the JSONL produced upstream,
//! processes records on a bounded pool of workers, appends results as they
//! complete and finally rewrites its output in key order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};

use super::jsonl::{canonical_order, read_jsonl, read_partial, write_jsonl, JsonlAppender};
use super::stages::{
    align_pair, build_user_profile, extract_aspects, filter_aspect_pool, generate_personas, summarize_item,
    AlignmentInputs, AspectCache, StageContext,
};
use super::{
    validate_corpus, AlignmentRecord, AspectSchema, AspectTuple, ItemMetadata, ItemSummary, PersonaSet, PipelineError,
    Provenance, Review, UserProfile,
};
use crate::eval::split::loo_split;

/// Which reviews the offline stages may read.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Holdout {
    /// Only training interactions of the leave-one-out split.
    #[default]
    LeaveOneOut,
    /// Every review.
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelinePaths {
    pub items: PathBuf,
    pub reviews: PathBuf,
    pub out_dir: PathBuf,
}

impl PipelinePaths {
    pub fn new(data_dir: &Path, out_dir: &Path) -> Self {
        Self {
            items: data_dir.join("items.jsonl"),
            reviews: data_dir.join("reviews.jsonl"),
            out_dir: out_dir.to_path_buf(),
        }
    }

    pub fn summaries(&self) -> PathBuf {
        self.out_dir.join("summaries.jsonl")
    }

    pub fn aspects(&self) -> PathBuf {
        self.out_dir.join("aspects.jsonl")
    }

    pub fn personas(&self) -> PathBuf {
        self.out_dir.join("personas.jsonl")
    }

    pub fn profiles(&self) -> PathBuf {
        self.out_dir.join("profiles.jsonl")
    }

    pub fn alignment(&self) -> PathBuf {
        self.out_dir.join("alignment.jsonl")
    }

    pub fn report(&self, stage: &str) -> PathBuf {
        self.out_dir.join(format!("{stage}.report.json"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flag {
    pub key: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    /// Records produced by this run.
    pub processed: usize,
    /// Records carried over from a previous run.
    pub reused: usize,
    pub flagged: Vec<Flag>,
}

impl StageReport {
    fn new(stage: &str) -> Self {
        Self { stage: stage.to_string(), ..Default::default() }
    }

    fn write(&self, paths: &PipelinePaths) -> Result<(), PipelineError> {
        let p = paths.report(&self.stage);
        fs::write(&p, serde_json::to_string_pretty(self).expect("report json"))
            .map_err(|e| PipelineError::Io { path: p, message: e.to_string() })
    }
}

/// Runs `f` over `inputs` on `workers` threads, handing results to `sink`
/// under a lock. The first fatal error stops new work and is returned.
pub fn run_parallel<I, O, F, S>(inputs: &[I], workers: usize, f: F, sink: S) -> Result<(), PipelineError>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> Result<O, PipelineError> + Sync,
    S: FnMut(&I, Result<O, PipelineError>) -> Result<(), PipelineError> + Send,
{
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let sink = Mutex::new(sink);
    let first_error: Mutex<Option<PipelineError>> = Mutex::new(None);
    thread::scope(|scope| {
        for _ in 0..workers.max(1).min(inputs.len().max(1)) {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(input) = inputs.get(i) else { break };
                let result = f(input);
                let outcome = (sink.lock().expect("sink lock"))(input, result);
                if let Err(e) = outcome {
                    abort.store(true, Ordering::SeqCst);
                    first_error.lock().expect("error lock").get_or_insert(e);
                    break;
                }
            });
        }
    });
    match first_error.into_inner().expect("error lock") {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Loads previously written records when resuming, otherwise clears the output.
fn prepare_output<T>(path: &Path, resume: bool) -> Result<Vec<T>, PipelineError>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let existing: Vec<T> = if resume { read_partial(path)? } else { Vec::new() };
    // Rewriting drops any partial line left by an interrupted run.
    write_jsonl(path, &existing)?;
    Ok(existing)
}

pub fn load_items(paths: &PipelinePaths) -> Result<Vec<ItemMetadata>, PipelineError> {
    let items: Vec<ItemMetadata> = read_jsonl(&paths.items)?;
    validate_corpus(&items)?;
    Ok(items)
}

pub fn load_reviews(paths: &PipelinePaths) -> Result<Vec<Review>, PipelineError> {
    let reviews: Vec<Review> = read_jsonl(&paths.reviews)?;
    reviews.iter().try_for_each(Review::validate)?;
    Ok(reviews)
}

/// Reviews the offline stages may see, tagged with their split.
pub fn visible_reviews(reviews: &[Review], holdout: Holdout) -> Vec<(Review, Provenance)> {
    match holdout {
        Holdout::LeaveOneOut => {
            loo_split(reviews).train_reviews().into_iter().map(|r| (r, Provenance::Train)).collect()
        }
        Holdout::None => {
            let tags = loo_split(reviews).provenance();
            reviews
                .iter()
                .map(|r| {
                    let tag = tags.get(&(r.user_id.clone(), r.item_id.clone())).copied().unwrap_or(Provenance::Train);
                    (r.clone(), tag)
                })
                .collect()
        }
    }
}

pub fn run_summarize(
    paths: &PipelinePaths,
    ctx: &StageContext<'_>,
    resume: bool,
) -> Result<StageReport, PipelineError> {
    let items = load_items(paths)?;
    let out = paths.summaries();
    let existing: Vec<ItemSummary> = prepare_output(&out, resume)?;
    let done: HashSet<String> = existing.iter().map(|s| s.item_id.clone()).collect();
    let todo: Vec<&ItemMetadata> = items.iter().filter(|i| !done.contains(&i.item_id)).collect();
    let appender = JsonlAppender::open(&out)?;
    let mut report = StageReport::new("summarize");
    report.reused = existing.len();
    run_parallel(
        &todo,
        ctx.settings.concurrency,
        |meta| summarize_item(meta, ctx),
        |meta, result| match result {
            Ok(summary) => {
                report.processed += 1;
                appender.append(&summary)
            }
            Err(e @ PipelineError::EmptyCompletion { .. }) => {
                report.flagged.push(Flag { key: meta.item_id.clone(), reason: e.to_string() });
                Ok(())
            }
            Err(e) => Err(e),
        },
    )?;
    finish(&out, |s: &ItemSummary| s.item_id.clone())?;
    report.flagged.sort_by(|a, b| a.key.cmp(&b.key));
    report.write(paths)?;
    Ok(report)
}

pub fn run_aspects(
    paths: &PipelinePaths,
    schema: &AspectSchema,
    holdout: Holdout,
    ctx: &StageContext<'_>,
    resume: bool,
) -> Result<StageReport, PipelineError> {
    let reviews = load_reviews(paths)?;
    let out = paths.aspects();
    let existing: Vec<AspectTuple> = prepare_output(&out, resume)?;
    let done: HashSet<(String, String)> = existing.iter().map(|t| (t.user_id.clone(), t.item_id.clone())).collect();
    let todo: Vec<(Review, Provenance)> = visible_reviews(&reviews, holdout)
        .into_iter()
        .filter(|(r, _)| !done.contains(&(r.user_id.clone(), r.item_id.clone())))
        .collect();
    let appender = JsonlAppender::open(&out)?;
    let mut report = StageReport::new("aspects");
    report.reused = existing.len();
    run_parallel(
        &todo,
        ctx.settings.concurrency,
        |(review, split)| {
            let mut t = extract_aspects(review, schema, ctx)?;
            t.split = Some(*split);
            Ok(t)
        },
        |_, result| {
            let t = result?;
            report.processed += 1;
            appender.append(&t)
        },
    )?;
    finish(&out, |t: &AspectTuple| (t.user_id.clone(), t.item_id.clone()))?;
    report.write(paths)?;
    Ok(report)
}

pub fn run_personas(paths: &PipelinePaths, ctx: &StageContext<'_>, resume: bool) -> Result<StageReport, PipelineError> {
    let summaries: Vec<ItemSummary> = read_jsonl(&paths.summaries())?;
    let aspects: Vec<AspectTuple> = read_jsonl(&paths.aspects())?;
    let mut pools: HashMap<&str, Vec<AspectTuple>> = HashMap::new();
    for t in &aspects {
        pools.entry(t.item_id.as_str()).or_default().push(t.clone());
    }
    let out = paths.personas();
    let existing: Vec<PersonaSet> = prepare_output(&out, resume)?;
    let done: HashSet<String> = existing.iter().map(|s| s.item_id.clone()).collect();
    let todo: Vec<&ItemSummary> = summaries.iter().filter(|s| !done.contains(&s.item_id)).collect();
    let appender = JsonlAppender::open(&out)?;
    let mut report = StageReport::new("personas");
    report.reused = existing.len();
    run_parallel(
        &todo,
        ctx.settings.concurrency,
        |summary| {
            let raw = pools.get(summary.item_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            let pool = filter_aspect_pool(raw, ctx.settings.max_null_fraction);
            generate_personas(summary, &pool, ctx)
        },
        |summary, result| {
            let outcome = result?;
            if outcome.set.personas.is_empty() {
                let reason = match &outcome.fallback {
                    Some(e) => format!("summary_only: {e}"),
                    None => "summary_only: no usable review aspects".to_string(),
                };
                report.flagged.push(Flag { key: summary.item_id.clone(), reason });
            }
            report.processed += 1;
            appender.append(&outcome.set)
        },
    )?;
    finish(&out, |s: &PersonaSet| s.item_id.clone())?;
    report.flagged.sort_by(|a, b| a.key.cmp(&b.key));
    report.write(paths)?;
    Ok(report)
}

/// Assembles each user's profile from cached summaries and aspects; no
/// provider calls.
pub fn run_profiles(paths: &PipelinePaths, holdout: Holdout, history_len: usize) -> Result<StageReport, PipelineError> {
    let reviews = load_reviews(paths)?;
    let summaries: Vec<ItemSummary> = read_jsonl(&paths.summaries())?;
    let aspects: Vec<AspectTuple> = read_jsonl(&paths.aspects())?;
    let summary_by_item: HashMap<&str, &ItemSummary> = summaries.iter().map(|s| (s.item_id.as_str(), s)).collect();
    let cache: AspectCache = aspects.into_iter().map(|t| ((t.user_id.clone(), t.item_id.clone()), t)).collect();
    let mut by_user: BTreeMap<String, Vec<(Review, ItemSummary)>> = BTreeMap::new();
    let mut report = StageReport::new("profiles");
    for (review, _) in visible_reviews(&reviews, holdout) {
        match summary_by_item.get(review.item_id.as_str()) {
            Some(s) => by_user.entry(review.user_id.clone()).or_default().push((review, (*s).clone())),
            None => report.flagged.push(Flag {
                key: format!("{}/{}", review.user_id, review.item_id),
                reason: "interaction item has no summary".into(),
            }),
        }
    }
    let profiles = by_user
        .iter()
        .map(|(user, interactions)| build_user_profile(user, interactions, &cache, history_len))
        .collect::<Result<Vec<UserProfile>, _>>()?;
    report.processed = profiles.len();
    write_jsonl(&paths.profiles(), &profiles)?;
    report.write(paths)?;
    Ok(report)
}

pub fn run_align(
    paths: &PipelinePaths,
    holdout: Holdout,
    ctx: &StageContext<'_>,
    resume: bool,
) -> Result<StageReport, PipelineError> {
    let items = load_items(paths)?;
    let reviews = load_reviews(paths)?;
    let profiles: HashMap<String, UserProfile> =
        read_jsonl::<UserProfile>(&paths.profiles())?.into_iter().map(|p| (p.user_id.clone(), p)).collect();
    let personas: HashMap<String, PersonaSet> =
        read_jsonl::<PersonaSet>(&paths.personas())?.into_iter().map(|s| (s.item_id.clone(), s)).collect();
    let titles: HashMap<String, String> = items.iter().map(|i| (i.item_id.clone(), i.title.clone())).collect();
    let inputs = AlignmentInputs { profiles: &profiles, titles: &titles, personas: &personas };

    let out = paths.alignment();
    let existing: Vec<AlignmentRecord> = prepare_output(&out, resume)?;
    let done: HashSet<(String, String)> = existing.iter().map(|r| (r.user_id.clone(), r.item_id.clone())).collect();
    let todo: Vec<(String, String, Provenance)> = visible_reviews(&reviews, holdout)
        .into_iter()
        .map(|(r, tag)| (r.user_id, r.item_id, tag))
        .filter(|(u, i, _)| !done.contains(&(u.clone(), i.clone())))
        .collect();
    let appender = JsonlAppender::open(&out)?;
    let mut report = StageReport::new("align");
    report.reused = existing.len();
    run_parallel(
        &todo,
        ctx.settings.concurrency,
        |(user, item, _)| align_pair(user, item, &inputs, ctx),
        |(user, item, tag), result| match result {
            Ok(mut r) => {
                r.split = Some(*tag);
                report.processed += 1;
                appender.append(&r)
            }
            Err(PipelineError::Skip(reason)) => {
                report.flagged.push(Flag { key: format!("{user}/{item}"), reason });
                Ok(())
            }
            Err(e) => Err(e),
        },
    )?;
    finish(&out, |r: &AlignmentRecord| (r.user_id.clone(), r.item_id.clone()))?;
    report.flagged.sort_by(|a, b| a.key.cmp(&b.key));
    report.write(paths)?;
    Ok(report)
}

fn finish<T, K: Ord>(path: &Path, key: impl Fn(&T) -> K) -> Result<(), PipelineError>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let records = canonical_order(read_jsonl::<T>(path)?, key);
    write_jsonl(path, &records)
}
