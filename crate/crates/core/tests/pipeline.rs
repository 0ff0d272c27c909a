use std::collections::HashMap;
use std::fs;
use std::path::Path;

use personarank::eval::{check_leakage, loo_split, EvalError, EvalInputs};
use personarank::pipeline::jsonl::{read_jsonl, write_jsonl};
use personarank::pipeline::runner::{run_align, run_aspects, run_personas, run_profiles, run_summarize};
use personarank::pipeline::{
    AlignmentRecord, AspectCache, AspectSchema, AspectTuple, CountingProvider, Holdout, ItemSummary, MockConfig,
    MockLlm, PipelinePaths, PipelineSettings, PromptTemplates, Provenance, RetryPolicy, StageContext,
};
use personarank::synthetic::keyword_corpus;
use tempfile::TempDir;

const OUTPUTS: [&str; 5] = ["summaries.jsonl", "aspects.jsonl", "personas.jsonl", "profiles.jsonl", "alignment.jsonl"];

fn corpus_dir(n_items: usize, n_reviews: usize) -> TempDir {
    let dir = TempDir::new().unwrap();
    let c = keyword_corpus(n_items, n_reviews, &MockConfig::default(), 1);
    write_jsonl(&dir.path().join("items.jsonl"), &c.items).unwrap();
    write_jsonl(&dir.path().join("reviews.jsonl"), &c.reviews).unwrap();
    dir
}

fn run_all(data: &Path, out: &Path, holdout: Holdout, llm: &CountingProvider<MockLlm>, resume: bool) {
    fs::create_dir_all(out).unwrap();
    let paths = PipelinePaths::new(data, out);
    let templates = PromptTemplates::default();
    let settings = PipelineSettings { concurrency: 4, ..Default::default() };
    let ctx = StageContext {
        llm,
        templates: &templates,
        retry: RetryPolicy { retry_limit: 0, backoff_ms: 0 },
        settings: &settings,
    };
    run_summarize(&paths, &ctx, resume).unwrap();
    run_aspects(&paths, &AspectSchema::default(), holdout, &ctx, resume).unwrap();
    run_personas(&paths, &ctx, resume).unwrap();
    run_profiles(&paths, holdout, settings.history_len).unwrap();
    run_align(&paths, holdout, &ctx, resume).unwrap();
}

fn mock() -> CountingProvider<MockLlm> {
    CountingProvider::new(MockLlm::new(MockConfig::default()))
}

#[test]
fn two_runs_write_identical_files() {
    let data = corpus_dir(40, 300);
    let a = data.path().join("a");
    let b = data.path().join("b");
    run_all(data.path(), &a, Holdout::LeaveOneOut, &mock(), false);
    run_all(data.path(), &b, Holdout::LeaveOneOut, &mock(), false);
    for f in OUTPUTS {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn resume_after_an_interrupted_run_matches_a_clean_run() {
    let data = corpus_dir(40, 300);
    let clean = data.path().join("clean");
    run_all(data.path(), &clean, Holdout::LeaveOneOut, &mock(), false);

    // Simulate a kill: keep the first half of every stage file plus a torn line.
    let partial = data.path().join("partial");
    fs::create_dir_all(&partial).unwrap();
    for f in OUTPUTS {
        let text = fs::read_to_string(clean.join(f)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let mut kept = lines[..lines.len() / 2].join("\n");
        kept.push_str("\n{\"item_id\": \"torn");
        fs::write(partial.join(f), kept).unwrap();
    }
    let first = mock();
    run_all(data.path(), &clean.with_extension("again"), Holdout::LeaveOneOut, &first, false);
    let resumed = mock();
    run_all(data.path(), &partial, Holdout::LeaveOneOut, &resumed, true);
    for f in OUTPUTS {
        assert_eq!(fs::read(clean.join(f)).unwrap(), fs::read(partial.join(f)).unwrap(), "{f} differs after resume");
    }
    assert!(resumed.calls() < first.calls(), "resume redid completed work");
}

fn leakage(out: &Path, data: &Path) -> Result<(), EvalError> {
    let split = loo_split(&read_jsonl(&data.join("reviews.jsonl")).unwrap());
    let summaries: HashMap<String, ItemSummary> = read_jsonl::<ItemSummary>(&out.join("summaries.jsonl"))
        .unwrap()
        .into_iter()
        .map(|s| (s.item_id.clone(), s))
        .collect();
    let aspects: AspectCache = read_jsonl::<AspectTuple>(&out.join("aspects.jsonl"))
        .unwrap()
        .into_iter()
        .map(|t| ((t.user_id.clone(), t.item_id.clone()), t))
        .collect();
    let alignment: Vec<AlignmentRecord> = read_jsonl(&out.join("alignment.jsonl")).unwrap();
    check_leakage(&split, &EvalInputs { summaries: &summaries, aspects: &aspects, alignment: &alignment })
}

#[test]
fn held_out_interactions_never_reach_offline_artifacts() {
    let data = corpus_dir(40, 300);
    let loo = data.path().join("loo");
    run_all(data.path(), &loo, Holdout::LeaveOneOut, &mock(), false);
    leakage(&loo, data.path()).unwrap();
    let records: Vec<AlignmentRecord> = read_jsonl(&loo.join("alignment.jsonl")).unwrap();
    assert!(records.iter().all(|r| r.split == Some(Provenance::Train)));

    let all = data.path().join("all");
    run_all(data.path(), &all, Holdout::None, &mock(), false);
    assert!(matches!(leakage(&all, data.path()), Err(EvalError::Leakage { .. })));
}
