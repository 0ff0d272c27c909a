//! Command implementations. Each returns a JSON summary that `main` prints
//! after the effective configuration.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use personarank::config::{EmbedderKind, RunConfig};
use personarank::embedding::{
    build_training_set, train_alignment, user_embedding, CachedEmbedder, HashEmbedder, HttpEmbedder, ProjectionHead,
    TextEmbedder,
};
use personarank::eval::{evaluate, load_candidates, loo_split, random_baseline, EvalInputs};
use personarank::index::{build_index, measure_latency, measure_latency_with, PersonaIndex};
use personarank::online::{AspectQueue, AspectStore, EngineState, RerankEngine};
use personarank::pipeline::jsonl::{read_jsonl, write_jsonl};
use personarank::pipeline::runner::{load_reviews, run_align, run_aspects, run_personas, run_profiles, run_summarize};
use personarank::pipeline::{
    AlignmentRecord, AnyProvider, AspectCache, AspectTuple, HttpProvider, ItemSummary, LlmProvider, MockLlm,
    PersonaSet, PipelinePaths, PromptTemplates, StageContext, StageReport, UserProfile,
};
use personarank::synthetic::{keyword_corpus, sample_candidates};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{BenchAction, Cli, Command, EvalAction, EvalArgs, EvalMode, IndexAction, Stage};
use crate::error::CliError;

/// Load the config file (or defaults) and apply command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.training.seed = seed;
        cfg.bench.seed = seed;
    }
    if let Some(out) = &cli.output {
        cfg.paths.out_dir = out.clone();
    }
    if let Some(data) = &cli.data {
        cfg.paths.data_dir = data.clone();
    }
    if let Command::Eval { action: EvalAction::Run(args) } = &cli.command {
        apply_eval_overrides(&mut cfg, args);
    }
    if let Command::Bench { action: BenchAction::Latency { candidates, users, repetitions } } = &cli.command {
        if let Some(c) = candidates {
            cfg.bench.candidate_series = c.clone();
            cfg.bench.num_candidates = c.iter().copied().max().unwrap_or(cfg.bench.num_candidates);
        }
        if let Some(u) = users {
            cfg.bench.user_batch_series = u.clone();
        }
        if let Some(r) = repetitions {
            cfg.bench.repetitions = *r;
        }
    }
    if let Command::Serve { host, port } = &cli.command {
        if let Some(h) = host {
            cfg.service.host = h.clone();
        }
        if let Some(p) = port {
            cfg.service.port = *p;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_eval_overrides(cfg: &mut RunConfig, args: &EvalArgs) {
    if let Some(EvalMode::Ablation(a)) = args.ablation {
        cfg.eval.ablation = a;
    }
    if let Some(ks) = &args.ks {
        cfg.eval.ks = ks.clone();
    }
    if !args.segment.is_empty() {
        cfg.eval.segments.axes = args.segment.clone();
    }
}

/// Run a non-service command.
pub fn run(cli: &Cli, cfg: &RunConfig) -> Result<Value, CliError> {
    match &cli.command {
        Command::Pipeline { stage } => run_stage(*stage, cfg, cli.mock_llm, cli.resume),
        Command::Train => train(cfg),
        Command::Index { action: IndexAction::Build { identity_head } } => index_build(cfg, *identity_head),
        Command::Index { action: IndexAction::Inspect { path } } => {
            index_inspect(path.as_deref().unwrap_or(&cfg.paths.index()))
        }
        Command::Eval { action: EvalAction::Run(args) } => eval_run(cfg, args),
        Command::Bench { action: BenchAction::Latency { .. } } => bench_latency(cfg),
        Command::Synth { items, reviews, negatives } => synth(cfg, *items, *reviews, *negatives),
        Command::Serve { .. } => Err(CliError::Usage("serve runs through serve::run".into())),
    }
}

fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingInput(path.to_path_buf()))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::Io { path: parent.to_path_buf(), message: e.to_string() })?;
    }
    let text = serde_json::to_string_pretty(value).expect("serializable report");
    fs::write(path, text + "\n").map_err(|e| CliError::Io { path: path.to_path_buf(), message: e.to_string() })
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io { path: dir.to_path_buf(), message: e.to_string() })
}

pub fn pipeline_paths(cfg: &RunConfig) -> PipelinePaths {
    PipelinePaths::new(&cfg.paths.data_dir, &cfg.paths.out_dir)
}

/// The configured provider, or the mock when `mock` is set.
pub fn make_provider(cfg: &RunConfig, mock: bool) -> Result<AnyProvider, CliError> {
    if mock {
        return Ok(AnyProvider::Mock(MockLlm::new(cfg.mock.clone())));
    }
    let Some(p) = &cfg.provider else {
        return Err(CliError::Usage("no [provider] table configured; add one or pass --mock-llm".into()));
    };
    let http = HttpProvider::new(p.clone()).map_err(|e| CliError::Pipeline(e.into()))?;
    Ok(AnyProvider::Http(http))
}

pub fn make_templates(cfg: &RunConfig) -> Result<PromptTemplates, CliError> {
    Ok(match &cfg.paths.prompts_dir {
        Some(dir) => PromptTemplates::load_dir(dir)?,
        None => PromptTemplates::default(),
    })
}

/// The frozen text encoder named by the config.
pub fn make_embedder(cfg: &RunConfig) -> Result<Arc<dyn TextEmbedder>, CliError> {
    Ok(match cfg.embedder.kind {
        EmbedderKind::Hash => Arc::new(HashEmbedder::new(cfg.embedder.dim)),
        EmbedderKind::Http => {
            let http = cfg.embedder.http.clone().expect("validated: http embedder has a table");
            Arc::new(HttpEmbedder::new(http)?)
        }
    })
}

/// Runs `f` with the configured embedder, wrapped in the on-disk cache when
/// one is configured.
fn with_embedder<R>(cfg: &RunConfig, f: impl FnOnce(&dyn TextEmbedder) -> Result<R, CliError>) -> Result<R, CliError> {
    let inner = make_embedder(cfg)?;
    match &cfg.embedder.cache_dir {
        Some(dir) => {
            let cached = CachedEmbedder::load(inner.as_ref(), dir)?;
            let out = f(&cached)?;
            cached.save(dir)?;
            Ok(out)
        }
        None => f(inner.as_ref()),
    }
}

/// Files a stage reads, checked before any provider is built.
fn stage_inputs(stage: Stage, paths: &PipelinePaths) -> Vec<std::path::PathBuf> {
    match stage {
        Stage::Summarize | Stage::All => vec![paths.items.clone()],
        Stage::Aspects => vec![paths.reviews.clone()],
        Stage::Personas => vec![paths.summaries(), paths.aspects()],
        Stage::Profiles => vec![paths.reviews.clone(), paths.summaries(), paths.aspects()],
        Stage::Align => vec![paths.items.clone(), paths.reviews.clone(), paths.profiles(), paths.personas()],
    }
}

fn run_stage(stage: Stage, cfg: &RunConfig, mock: bool, resume: bool) -> Result<Value, CliError> {
    let paths = pipeline_paths(cfg);
    stage_inputs(stage, &paths).iter().try_for_each(|p| require(p))?;
    ensure_dir(&cfg.paths.out_dir)?;
    if stage == Stage::Profiles {
        let report = run_profiles(&paths, cfg.holdout, cfg.pipeline.history_len)?;
        return Ok(json!({ "stages": [report] }));
    }
    let provider = make_provider(cfg, mock)?;
    let templates = make_templates(cfg)?;
    let ctx = StageContext { llm: &provider, templates: &templates, retry: cfg.retry, settings: &cfg.pipeline };
    let order = match stage {
        Stage::All => vec![Stage::Summarize, Stage::Aspects, Stage::Personas, Stage::Profiles, Stage::Align],
        one => vec![one],
    };
    let mut reports: Vec<StageReport> = Vec::new();
    for s in order {
        let report = match s {
            Stage::Summarize => run_summarize(&paths, &ctx, resume)?,
            Stage::Aspects => run_aspects(&paths, &cfg.schema, cfg.holdout, &ctx, resume)?,
            Stage::Personas => run_personas(&paths, &ctx, resume)?,
            Stage::Profiles => run_profiles(&paths, cfg.holdout, cfg.pipeline.history_len)?,
            Stage::Align => run_align(&paths, cfg.holdout, &ctx, resume)?,
            Stage::All => unreachable!("expanded above"),
        };
        reports.push(report);
    }
    Ok(json!({ "stages": reports }))
}

fn read_required<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    require(path)?;
    Ok(read_jsonl(path)?)
}

fn train(cfg: &RunConfig) -> Result<Value, CliError> {
    let paths = pipeline_paths(cfg);
    let records: Vec<AlignmentRecord> = read_required(&paths.alignment())?;
    let profiles: HashMap<String, UserProfile> =
        read_required::<UserProfile>(&paths.profiles())?.into_iter().map(|p| (p.user_id.clone(), p)).collect();
    let personas: HashMap<String, PersonaSet> =
        read_required::<PersonaSet>(&paths.personas())?.into_iter().map(|s| (s.item_id.clone(), s)).collect();
    let set = with_embedder(cfg, |e| Ok(build_training_set(&records, &profiles, &personas, e)?))?;
    let init = ProjectionHead::<f64>::identity(cfg.embedder.dim);
    let (head, log) = train_alignment(&set, &cfg.training, init)?;
    let head = head.cast::<f32>();
    ensure_dir(&cfg.paths.out_dir)?;
    head.save(&cfg.paths.head())?;
    write_json(&cfg.paths.training_log(), &log)?;
    Ok(json!({
        "head": cfg.paths.head(),
        "head_hash": head.content_hash(),
        "examples": set.examples.len(),
        "skipped": set.skipped.len(),
        "first_loss": log.first_loss(),
        "last_loss": log.last_loss(),
    }))
}

/// The trained head, or the identity head when allowed and none exists.
pub fn load_head(cfg: &RunConfig, identity_fallback: bool) -> Result<ProjectionHead<f32>, CliError> {
    let path = cfg.paths.head();
    if !path.exists() && identity_fallback {
        return Ok(ProjectionHead::identity(cfg.embedder.dim).with_config(cfg.training.tau, cfg.training.gamma));
    }
    require(&path)?;
    Ok(ProjectionHead::load(&path)?)
}

pub fn load_index(path: &Path) -> Result<PersonaIndex<f32>, CliError> {
    require(path)?;
    Ok(PersonaIndex::load(path)?)
}

fn index_build(cfg: &RunConfig, identity_head: bool) -> Result<Value, CliError> {
    let paths = pipeline_paths(cfg);
    let summaries: Vec<ItemSummary> = read_required(&paths.summaries())?;
    let personas: Vec<PersonaSet> = read_required(&paths.personas())?;
    let head = load_head(cfg, identity_head)?;
    let index = with_embedder(cfg, |e| Ok(build_index(&personas, &summaries, e, &head)?))?;
    index.save(&cfg.paths.index())?;
    Ok(json!({
        "index": cfg.paths.index(),
        "build_id": index.build_id(),
        "head_hash": index.metadata().head_hash,
        "items": index.len(),
        "personas": index.persona_count(),
        "summary_only_items": index.entries().iter().filter(|e| e.is_summary_only()).count(),
    }))
}

fn index_inspect(path: &Path) -> Result<Value, CliError> {
    let index = load_index(path)?;
    let mut per_count: std::collections::BTreeMap<usize, usize> = Default::default();
    for e in index.entries() {
        *per_count.entry(e.persona_vectors.len()).or_default() += 1;
    }
    Ok(json!({
        "path": path,
        "build_id": index.build_id(),
        "dim": index.dim(),
        "items": index.len(),
        "personas": index.persona_count(),
        "items_by_persona_count": per_count,
        "metadata": index.metadata(),
    }))
}

fn read_optional<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    if path.exists() {
        Ok(read_jsonl(path)?)
    } else {
        Ok(Vec::new())
    }
}

fn eval_run(cfg: &RunConfig, args: &EvalArgs) -> Result<Value, CliError> {
    let paths = pipeline_paths(cfg);
    require(&paths.reviews)?;
    let split = loo_split(&load_reviews(&paths)?);
    let cand_path = args.candidates.clone().unwrap_or_else(|| cfg.paths.candidates());
    require(&cand_path)?;
    let candidates = load_candidates(&cand_path)?;
    let report = if args.ablation == Some(EvalMode::Random) {
        let mut r = random_baseline(&split, &candidates, &cfg.eval, cfg.seed);
        r.mode = "random".into();
        r
    } else {
        let summaries: HashMap<String, ItemSummary> =
            read_required::<ItemSummary>(&paths.summaries())?.into_iter().map(|s| (s.item_id.clone(), s)).collect();
        let aspects: AspectCache = read_optional::<AspectTuple>(&paths.aspects())?
            .into_iter()
            .map(|t| ((t.user_id.clone(), t.item_id.clone()), t))
            .collect();
        let alignment: Vec<AlignmentRecord> = read_optional(&paths.alignment())?;
        let head = load_head(cfg, false)?;
        let index = load_index(&cfg.paths.index())?;
        index.check_head(&head)?;
        let inputs = EvalInputs { summaries: &summaries, aspects: &aspects, alignment: &alignment };
        with_embedder(cfg, |e| Ok(evaluate(&split, &candidates, &inputs, e, &head, &index, &cfg.eval)?))?
    };
    let out = args.report.clone().unwrap_or_else(|| cfg.paths.report());
    write_json(&out, &report)?;
    Ok(json!({
        "report": out,
        "mode": report.mode,
        "users": report.users,
        "metrics": report.metrics,
        "target_absent": report.target_absent,
        "missing_candidates": report.missing_candidates,
    }))
}

/// Times the online path when stored profiles and the head are available:
/// each sample encodes a profile's history and reranks. Otherwise users are
/// random unit vectors and only scoring is timed.
fn bench_latency(cfg: &RunConfig) -> Result<Value, CliError> {
    let index = load_index(&cfg.paths.index())?;
    let profiles: Vec<UserProfile> = read_optional(&pipeline_paths(cfg).profiles())?;
    let profiles: Vec<UserProfile> = profiles.into_iter().filter(|p| !p.entries.is_empty()).collect();
    let (report, users) = if profiles.is_empty() || !cfg.paths.head().exists() {
        (measure_latency(&index, &cfg.bench), "random")
    } else {
        let head = load_head(cfg, false)?;
        index.check_head(&head)?;
        let embedder = make_embedder(cfg)?;
        let encode = |i: usize| {
            let p = &profiles[i % profiles.len()];
            user_embedding(&p.entries, embedder.as_ref(), &head).map(|v| v.into_inner())
        };
        // Surface encoding errors before timing.
        let slots = cfg.bench.user_batch_series.iter().copied().chain([cfg.bench.num_users]).max().unwrap_or(1);
        for i in 0..slots.min(profiles.len()) {
            encode(i)?;
        }
        let report = measure_latency_with(&index, &cfg.bench, |i| encode(i).expect("encoded above"));
        (report, "profile")
    };
    write_json(&cfg.paths.latency(), &report)?;
    Ok(json!({ "latency": cfg.paths.latency(), "build_id": index.build_id(), "users": users, "report": report }))
}

fn synth(cfg: &RunConfig, items: usize, reviews: usize, negatives: usize) -> Result<Value, CliError> {
    let corpus = keyword_corpus(items, reviews, &cfg.mock, cfg.seed);
    let ids: Vec<String> = corpus.items.iter().map(|i| i.item_id.clone()).collect();
    let candidates = sample_candidates(&corpus.reviews, &ids, negatives, cfg.seed);
    let paths = pipeline_paths(cfg);
    ensure_dir(&cfg.paths.data_dir)?;
    write_jsonl(&paths.items, &corpus.items)?;
    write_jsonl(&paths.reviews, &corpus.reviews)?;
    write_jsonl(&cfg.paths.candidates(), &candidates)?;
    Ok(json!({
        "items": corpus.items.len(),
        "reviews": corpus.reviews.len(),
        "candidate_lists": candidates.len(),
        "data_dir": cfg.paths.data_dir,
    }))
}

/// Everything the service scores against, loaded from the artifact directory.
pub fn load_engine_state(cfg: &RunConfig) -> Result<EngineState, CliError> {
    let paths = pipeline_paths(cfg);
    let index = load_index(&cfg.paths.index())?;
    let head = load_head(cfg, false)?;
    index.check_head(&head)?;
    let summaries: HashMap<String, String> =
        read_required::<ItemSummary>(&paths.summaries())?.into_iter().map(|s| (s.item_id, s.text)).collect();
    let profiles: HashMap<String, UserProfile> =
        read_optional::<UserProfile>(&paths.profiles())?.into_iter().map(|p| (p.user_id.clone(), p)).collect();
    let embedder = make_embedder(cfg)?;
    EngineState::new(index, head, embedder, summaries, profiles, cfg.pipeline.history_len)
        .map_err(|e| CliError::Service(e.to_string()))
}

/// An engine with an aspect queue when a provider is available. The state
/// is loaded separately so the service can answer 503 until it is ready.
pub fn make_engine(cfg: &RunConfig, mock: bool) -> Result<RerankEngine, CliError> {
    let provider: Option<Arc<dyn LlmProvider>> =
        if mock || cfg.provider.is_some() { Some(Arc::new(make_provider(cfg, mock)?)) } else { None };
    let engine = RerankEngine::new();
    Ok(match provider {
        Some(llm) => {
            let store = Arc::new(AspectStore::default());
            let queue = AspectQueue::start(
                llm,
                make_templates(cfg)?,
                cfg.schema.clone(),
                cfg.pipeline.clone(),
                Arc::clone(&store),
            );
            engine.with_queue(queue, store)
        }
        None => engine,
    })
}

pub fn config_json(cfg: &RunConfig) -> Value {
    json!({ "effective_config": cfg })
}
