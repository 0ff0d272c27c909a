use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::llm::{complete_with_retry, LlmProvider, RetryPolicy};
use super::mock::overlap_judge;
use super::payload::{
    AlignCompletion, AlignPayload, AspectsPayload, IndexedPersona, PersonasCompletion, PersonasPayload,
    SummarizePayload,
};
use super::prompts::{extract_json_block, PromptTemplates, ALIGN, ASPECTS, PERSONAS, SUMMARIZE};
use super::{
    AlignmentRecord, AspectSchema, AspectTuple, ItemMetadata, ItemSummary, PersonaRecord, PersonaSet, PipelineError,
    ProfileEntry, Review, UserProfile,
};
use crate::text::truncate_chars;

/// Cached aspect tuples keyed by `(user_id, item_id)`.
pub type AspectCache = HashMap<(String, String), AspectTuple>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSettings {
    pub summary_max_chars: usize,
    /// Tuples whose null fraction exceeds this are dropped from the pool.
    pub max_null_fraction: f64,
    pub min_personas: usize,
    pub max_personas: usize,
    /// Re-asks after a rejected persona or judge completion.
    pub completion_retry_limit: u32,
    pub history_len: usize,
    pub concurrency: usize,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            summary_max_chars: 1200,
            max_null_fraction: 0.75,
            min_personas: 2,
            max_personas: 7,
            completion_retry_limit: 3,
            history_len: 10,
            concurrency: 8,
        }
    }
}

/// Everything a stage needs to talk to the provider.
#[derive(Clone, Copy)]
pub struct StageContext<'a> {
    pub llm: &'a dyn LlmProvider,
    pub templates: &'a PromptTemplates,
    pub retry: RetryPolicy,
    pub settings: &'a PipelineSettings,
}

impl StageContext<'_> {
    fn call<P: Serialize>(&self, template_id: &str, payload: &P) -> Result<String, PipelineError> {
        let prompt = self.templates.render(template_id, payload);
        Ok(complete_with_retry(self.llm, &prompt, template_id, self.retry)?)
    }
}

pub fn summarize_item(meta: &ItemMetadata, ctx: &StageContext<'_>) -> Result<ItemSummary, PipelineError> {
    meta.validate()?;
    let payload = SummarizePayload {
        title: meta.title.clone(),
        description: meta.description.clone(),
        categories: meta.categories.clone(),
        attributes: meta.attributes.clone(),
        max_chars: ctx.settings.summary_max_chars,
    };
    let text = ctx.call(SUMMARIZE, &payload)?;
    let text = truncate_chars(text.trim(), ctx.settings.summary_max_chars).trim_end();
    if text.is_empty() {
        return Err(PipelineError::EmptyCompletion { key: meta.item_id.clone() });
    }
    Ok(ItemSummary { item_id: meta.item_id.clone(), text: text.to_string() })
}

/// Reads a slot map; anything else is treated as malformed.
fn parse_slots(completion: &str, schema: &AspectSchema) -> Result<BTreeMap<String, Option<String>>, PipelineError> {
    let value: serde_json::Value = serde_json::from_str(extract_json_block(completion))
        .map_err(|e| PipelineError::MalformedCompletion(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| PipelineError::MalformedCompletion("aspect completion is not an object".into()))?;
    Ok(schema
        .slots
        .iter()
        .map(|slot| {
            let v = obj
                .get(slot)
                .and_then(|v| v.as_str())
                .map(str::trim)
                .filter(|s| !s.is_empty() && !s.eq_ignore_ascii_case("null"))
                .map(String::from);
            (slot.clone(), v)
        })
        .collect())
}

pub fn extract_aspects(
    review: &Review,
    schema: &AspectSchema,
    ctx: &StageContext<'_>,
) -> Result<AspectTuple, PipelineError> {
    let mut tuple = AspectTuple::all_null(&review.user_id, &review.item_id, schema);
    if review.text.trim().is_empty() {
        return Ok(tuple);
    }
    let payload = AspectsPayload { review: review.text.clone(), rating: review.rating, schema: schema.slots.clone() };
    let completion = ctx.call(ASPECTS, &payload)?;
    match parse_slots(&completion, schema) {
        Ok(slots) => tuple.slots = slots,
        Err(e) => log::warn!("aspects for ({}, {}): {e}; using all-null tuple", review.user_id, review.item_id),
    }
    Ok(tuple)
}

/// Keeps tuples whose null fraction is at most `max_null_fraction`, in order.
pub fn filter_aspect_pool(tuples: &[AspectTuple], max_null_fraction: f64) -> Vec<AspectTuple> {
    tuples.iter().filter(|t| t.null_fraction() <= max_null_fraction).cloned().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonaOutcome {
    pub set: PersonaSet,
    pub attempts: u32,
    /// Why the item fell back to summary-only indexing, if it did.
    pub fallback: Option<PipelineError>,
}

fn validate_personas(completion: &str, settings: &PipelineSettings) -> Result<Vec<PersonaRecord>, PipelineError> {
    let parsed: PersonasCompletion = serde_json::from_str(extract_json_block(completion))
        .or_else(|_| {
            serde_json::from_str(extract_json_block(completion)).map(|personas| PersonasCompletion { personas })
        })
        .map_err(|e| PipelineError::MalformedPersona(e.to_string()))?;
    let found = parsed.personas.len();
    if found < settings.min_personas || found > settings.max_personas {
        return Err(PipelineError::PersonaCountOutOfRange {
            found,
            min: settings.min_personas,
            max: settings.max_personas,
        });
    }
    let personas = parsed
        .personas
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            p.complete().ok_or_else(|| PipelineError::MalformedPersona(format!("persona {i} is missing a field")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut seen = HashSet::new();
    if let Some(dup) = personas.iter().find(|p| !seen.insert(p.name.as_str())) {
        return Err(PipelineError::MalformedPersona(format!("duplicate persona name {}", dup.name)));
    }
    Ok(personas)
}

/// Builds the persona set for one item. An empty pool yields an empty set.
/// Out-of-range or malformed completions are re-requested with a correction
/// note; once the retry limit is spent the item degrades to summary-only.
pub fn generate_personas(
    summary: &ItemSummary,
    pool: &[AspectTuple],
    ctx: &StageContext<'_>,
) -> Result<PersonaOutcome, PipelineError> {
    let mut set = PersonaSet { item_id: summary.item_id.clone(), personas: Vec::new() };
    if pool.is_empty() {
        return Ok(PersonaOutcome { set, attempts: 0, fallback: None });
    }
    let mut payload = PersonasPayload {
        summary: summary.text.clone(),
        aspects: pool.iter().map(|t| t.slots.clone()).collect(),
        min_personas: ctx.settings.min_personas,
        max_personas: ctx.settings.max_personas,
        correction: None,
    };
    let mut attempts = 0;
    let mut last_error = None;
    while attempts <= ctx.settings.completion_retry_limit {
        attempts += 1;
        let completion = ctx.call(PERSONAS, &payload)?;
        match validate_personas(&completion, ctx.settings) {
            Ok(personas) => {
                set.personas = personas;
                return Ok(PersonaOutcome { set, attempts, fallback: None });
            }
            Err(e) => {
                log::warn!("personas for {} rejected (attempt {attempts}): {e}", summary.item_id);
                payload.correction = Some(e.to_string());
                last_error = Some(e);
            }
        }
    }
    Ok(PersonaOutcome { set, attempts, fallback: last_error })
}

/// `Name: …\nDescription: …\nPreference Rationale: …`, no trailing newline.
pub fn serialize_persona(p: &PersonaRecord) -> String {
    format!("Name: {}\nDescription: {}\nPreference Rationale: {}", p.name, p.description, p.rationale)
}

/// Inverse of [`serialize_persona`]. Field values may contain newlines; the
/// name may not contain `"\nDescription: "` and the description may not
/// contain `"\nPreference Rationale: "`.
pub fn parse_persona(text: &str) -> Option<PersonaRecord> {
    let rest = text.strip_prefix("Name: ")?;
    let (name, rest) = rest.split_once("\nDescription: ")?;
    let (description, rationale) = rest.split_once("\nPreference Rationale: ")?;
    Some(PersonaRecord::new(name, description, rationale))
}

/// Most recent `history_len` interactions, newest first. Equal timestamps
/// order by input position, later records counting as more recent.
pub fn build_user_profile(
    user_id: &str,
    interactions: &[(Review, ItemSummary)],
    aspects: &AspectCache,
    history_len: usize,
) -> Result<UserProfile, PipelineError> {
    if interactions.is_empty() {
        return Err(PipelineError::EmptyHistory(user_id.to_string()));
    }
    let mut order: Vec<usize> = (0..interactions.len()).collect();
    order.sort_by(|&a, &b| interactions[b].0.timestamp.cmp(&interactions[a].0.timestamp).then(b.cmp(&a)));
    let entries = order
        .into_iter()
        .take(history_len)
        .map(|i| {
            let (review, summary) = &interactions[i];
            ProfileEntry {
                item_id: review.item_id.clone(),
                summary: summary.text.clone(),
                aspect: aspects.get(&(user_id.to_string(), review.item_id.clone())).cloned(),
                timestamp: review.timestamp,
            }
        })
        .collect();
    Ok(UserProfile { user_id: user_id.to_string(), entries })
}

/// Asks the judge which persona best explains the interaction. Invalid
/// answers are re-requested; after the retry limit the overlap rule decides.
pub fn align_user_persona(
    profile: &UserProfile,
    item_id: &str,
    title: &str,
    personas: &PersonaSet,
    ctx: &StageContext<'_>,
) -> Result<AlignmentRecord, PipelineError> {
    if personas.personas.is_empty() {
        return Err(PipelineError::EmptyPersonaSet(personas.item_id.clone()));
    }
    let record = |persona_index: usize, justification: String| AlignmentRecord {
        user_id: profile.user_id.clone(),
        item_id: item_id.to_string(),
        persona_index,
        justification,
        split: None,
    };
    if personas.personas.len() == 1 {
        return Ok(record(0, "Only one persona is available for this item.".into()));
    }
    let texts: Vec<String> = personas.personas.iter().map(serialize_persona).collect();
    let profile_text = profile.to_text();
    let payload = AlignPayload {
        profile: profile_text.clone(),
        title: title.to_string(),
        personas: texts.iter().enumerate().map(|(index, text)| IndexedPersona { index, text: text.clone() }).collect(),
    };
    for attempt in 0..=ctx.settings.completion_retry_limit {
        let completion = ctx.call(ALIGN, &payload)?;
        let parsed: Result<AlignCompletion, _> = serde_json::from_str(extract_json_block(&completion));
        match parsed {
            Ok(c) if c.persona_index >= 0 && (c.persona_index as usize) < texts.len() => {
                let justification = if c.justification.trim().is_empty() {
                    format!("Selected persona {}.", personas.personas[c.persona_index as usize].name)
                } else {
                    c.justification.trim().to_string()
                };
                return Ok(record(c.persona_index as usize, justification));
            }
            Ok(c) => log::warn!(
                "judge named persona {} of {} for ({}, {item_id}) on attempt {}",
                c.persona_index,
                texts.len(),
                profile.user_id,
                attempt + 1
            ),
            Err(e) => log::warn!("unreadable judge completion for ({}, {item_id}): {e}", profile.user_id),
        }
    }
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let (index, justification) = overlap_judge(&profile_text, &refs);
    Ok(record(index, justification))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedInteraction {
    pub user_id: String,
    pub item_id: String,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct AlignmentOutcome {
    pub records: Vec<AlignmentRecord>,
    pub skipped: Vec<SkippedInteraction>,
}

/// Read-only lookups the alignment stage needs.
pub struct AlignmentInputs<'a> {
    pub profiles: &'a HashMap<String, UserProfile>,
    pub titles: &'a HashMap<String, String>,
    pub personas: &'a HashMap<String, PersonaSet>,
}

/// Judges each `(user, item)` pair not already in `done`. Pairs whose item
/// has no personas or whose user has no profile are skipped and reported.
pub fn build_alignment_dataset(
    pairs: &[(String, String)],
    inputs: &AlignmentInputs<'_>,
    done: &HashSet<(String, String)>,
    ctx: &StageContext<'_>,
) -> Result<AlignmentOutcome, PipelineError> {
    let mut out = AlignmentOutcome::default();
    for (user, item) in pairs {
        if done.contains(&(user.clone(), item.clone())) {
            continue;
        }
        match align_pair(user, item, inputs, ctx) {
            Ok(r) => out.records.push(r),
            Err(PipelineError::Skip(reason)) => {
                out.skipped.push(SkippedInteraction { user_id: user.clone(), item_id: item.clone(), reason })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub(crate) fn align_pair(
    user: &str,
    item: &str,
    inputs: &AlignmentInputs<'_>,
    ctx: &StageContext<'_>,
) -> Result<AlignmentRecord, PipelineError> {
    let set = match inputs.personas.get(item) {
        Some(s) if !s.personas.is_empty() => s,
        Some(_) => return Err(PipelineError::Skip("item is summary-only".into())),
        None => return Err(PipelineError::Skip("item has no persona set".into())),
    };
    let profile = inputs.profiles.get(user).ok_or_else(|| PipelineError::Skip("user has no profile".into()))?;
    let title = inputs.titles.get(item).map(String::as_str).unwrap_or(item);
    align_user_persona(profile, item, title, set, ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::mock::MockLlm;

    fn tuple(values: [Option<&str>; 4]) -> AspectTuple {
        let schema = AspectSchema::default();
        AspectTuple {
            user_id: "u".into(),
            item_id: "i".into(),
            slots: schema.slots.iter().cloned().zip(values.map(|v| v.map(String::from))).collect(),
            split: None,
        }
    }

    #[test]
    fn filter_threshold_is_strict() {
        let all_null = tuple([None; 4]);
        let three_null = tuple([Some("x"), None, None, None]);
        let full = tuple([Some("a"), Some("b"), Some("c"), Some("d")]);
        let kept = filter_aspect_pool(&[all_null, three_null.clone(), full.clone()], 0.75);
        assert_eq!(kept, vec![three_null, full]);
    }

    #[test]
    fn persona_template_is_exact() {
        assert_eq!(
            serialize_persona(&PersonaRecord::new("A", "B", "C")),
            "Name: A\nDescription: B\nPreference Rationale: C"
        );
        let multi = PersonaRecord::new("A", "line1\nline2", "x\ny");
        assert_eq!(serialize_persona(&multi), "Name: A\nDescription: line1\nline2\nPreference Rationale: x\ny");
        assert_eq!(parse_persona(&serialize_persona(&multi)), Some(multi));
        assert_eq!(parse_persona("garbage"), None);
    }

    #[test]
    fn empty_history_is_an_error() {
        assert!(matches!(build_user_profile("u", &[], &AspectCache::new(), 10), Err(PipelineError::EmptyHistory(_))));
    }

    struct Scripted(Vec<&'static str>, std::sync::atomic::AtomicUsize);

    impl LlmProvider for Scripted {
        fn complete(&self, _: &str, _: &str) -> Result<String, super::super::ProviderError> {
            let i = self.1.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            Ok(self.0[i.min(self.0.len() - 1)].to_string())
        }
    }

    fn ctx<'a>(llm: &'a dyn LlmProvider, t: &'a PromptTemplates, s: &'a PipelineSettings) -> StageContext<'a> {
        StageContext { llm, templates: t, retry: RetryPolicy { retry_limit: 0, backoff_ms: 0 }, settings: s }
    }

    #[test]
    fn persistent_bad_persona_count_degrades_to_summary_only() {
        let llm =
            Scripted(vec![r#"{"personas":[{"name":"a","description":"b","rationale":"c"}]}"#], Default::default());
        let (t, s) = (PromptTemplates::default(), PipelineSettings::default());
        let summary = ItemSummary { item_id: "i".into(), text: "s".into() };
        let out = generate_personas(&summary, &[tuple([Some("x"); 4])], &ctx(&llm, &t, &s)).unwrap();
        assert!(out.set.personas.is_empty());
        assert_eq!(out.attempts, 4);
        assert!(matches!(out.fallback, Some(PipelineError::PersonaCountOutOfRange { found: 1, .. })));
    }

    #[test]
    fn missing_persona_field_is_rejected_then_recovered() {
        let llm = Scripted(
            vec![
                r#"{"personas":[{"name":"a","description":"b"},{"name":"c","description":"d","rationale":"e"}]}"#,
                r#"{"personas":[{"name":"a","description":"b","rationale":"r"},{"name":"c","description":"d","rationale":"e"}]}"#,
            ],
            Default::default(),
        );
        let (t, s) = (PromptTemplates::default(), PipelineSettings::default());
        let summary = ItemSummary { item_id: "i".into(), text: "s".into() };
        let out = generate_personas(&summary, &[tuple([Some("x"); 4])], &ctx(&llm, &t, &s)).unwrap();
        assert_eq!(out.attempts, 2);
        assert_eq!(out.set.personas.len(), 2);
        assert!(out.fallback.is_none());
    }

    #[test]
    fn out_of_range_judge_falls_back_to_overlap_rule() {
        let llm = Scripted(vec![r#"{"persona_index": 9, "justification": "?"}"#], Default::default());
        let (t, s) = (PromptTemplates::default(), PipelineSettings::default());
        let profile = UserProfile {
            user_id: "u".into(),
            entries: vec![ProfileEntry {
                item_id: "x".into(),
                summary: "space rockets".into(),
                aspect: None,
                timestamp: 0,
            }],
        };
        let set = PersonaSet {
            item_id: "i".into(),
            personas: vec![PersonaRecord::new("A", "gardening", "soil"), PersonaRecord::new("B", "space", "rockets")],
        };
        let r = align_user_persona(&profile, "i", "t", &set, &ctx(&llm, &t, &s)).unwrap();
        assert_eq!(r.persona_index, 1);
        assert_eq!(llm.1.load(std::sync::atomic::Ordering::SeqCst), 4);
    }

    #[test]
    fn blank_summary_is_flagged() {
        let llm = Scripted(vec!["   "], Default::default());
        let (t, s) = (PromptTemplates::default(), PipelineSettings::default());
        let meta = ItemMetadata {
            item_id: "i".into(),
            title: "T".into(),
            description: String::new(),
            categories: vec![],
            attributes: Default::default(),
        };
        assert!(matches!(summarize_item(&meta, &ctx(&llm, &t, &s)), Err(PipelineError::EmptyCompletion { .. })));
    }

    #[test]
    fn malformed_aspects_yield_all_null() {
        let llm = Scripted(vec!["not json"], Default::default());
        let (t, s) = (PromptTemplates::default(), PipelineSettings::default());
        let review = Review { user_id: "u".into(), item_id: "i".into(), rating: 5, text: "dark".into(), timestamp: 1 };
        let tuple = extract_aspects(&review, &AspectSchema::default(), &ctx(&llm, &t, &s)).unwrap();
        assert_eq!(tuple.null_count(), 4);
    }

    #[test]
    fn summary_is_capped() {
        let mock = MockLlm::default();
        let (t, mut s) = (PromptTemplates::default(), PipelineSettings::default());
        s.summary_max_chars = 5;
        let meta = ItemMetadata {
            item_id: "i".into(),
            title: "Long Title".into(),
            description: "d".into(),
            categories: vec![],
            attributes: Default::default(),
        };
        assert_eq!(summarize_item(&meta, &ctx(&mock, &t, &s)).unwrap().text, "Long");
    }
}
