mod common;

use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use common::{ThreadCountingLlm, Workspace};
use http_body_util::BodyExt;
use personarank::online::{AspectQueue, AspectStore, HistoryEntry, RerankEngine, RerankRequest};
use personarank::pipeline::{AspectSchema, PipelineSettings, PromptTemplates};
use personarank_cli::commands::load_engine_state;
use personarank_cli::service::router;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(engine: &Arc<RerankEngine>, req: Request<Body>) -> (StatusCode, Value) {
    let resp = router(Arc::clone(engine)).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn post(body: &str) -> Request<Body> {
    Request::post("/rerank").header("content-type", "application/json").body(Body::from(body.to_string())).unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn loaded(ws: &Workspace) -> Arc<RerankEngine> {
    Arc::new(RerankEngine::with_state(load_engine_state(&ws.config(&[])).unwrap()))
}

fn item_ids(ws: &Workspace) -> Vec<String> {
    let cfg = ws.config(&[]);
    personarank::index::PersonaIndex::<f32>::load(&cfg.paths.index())
        .unwrap()
        .entries()
        .iter()
        .map(|e| e.item_id.clone())
        .collect()
}

#[tokio::test]
async fn unloaded_engine_answers_503() {
    let engine = Arc::new(RerankEngine::new());
    let (s, _) = call(&engine, post(r#"{"user_id":"u","candidates":["a"]}"#)).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(call(&engine, get("/healthz")).await.0, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(call(&engine, get("/items/a/personas")).await.0, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn one_interaction_ranks_twenty_candidates_deterministically() {
    let ws = Workspace::built(60, 500);
    let engine = loaded(&ws);
    let ids = item_ids(&ws);
    let body = json!({
        "history": [{ "item_id": ids[0], "review": "I liked the mystery. read it twice" }],
        "candidates": ids[1..21],
    })
    .to_string();
    let (s, first) = call(&engine, post(&body)).await;
    assert_eq!(s, StatusCode::OK, "{first}");
    let items = first["items"].as_array().unwrap();
    assert_eq!(items.len(), 20);
    let mut got: Vec<&str> = items.iter().map(|i| i["item_id"].as_str().unwrap()).collect();
    got.sort_unstable();
    let mut want: Vec<&str> = ids[1..21].iter().map(String::as_str).collect();
    want.sort_unstable();
    assert_eq!(got, want);

    let (_, second) = call(&engine, post(&body)).await;
    let strip = |mut v: Value| {
        v.as_object_mut().unwrap().remove("timing_us");
        v
    };
    assert_eq!(strip(first.clone()), strip(second));
    let (_, health) = call(&engine, get("/healthz")).await;
    assert_eq!(health["build_id"], first["build_id"]);
}

#[tokio::test]
async fn request_errors_map_to_status_codes() {
    let ws = Workspace::built(40, 300);
    let engine = loaded(&ws);
    let ids = item_ids(&ws);
    let known = &ids[0];
    let cases = [
        ("not json", StatusCode::BAD_REQUEST),
        (r#"{"candidates":["x"],"surprise":1}"#, StatusCode::BAD_REQUEST),
        (r#"{"candidates":["x"]}"#, StatusCode::BAD_REQUEST),
        (&*format!(r#"{{"history":[{{"item_id":"{known}"}}],"candidates":[]}}"#), StatusCode::BAD_REQUEST),
        (&*format!(r#"{{"history":[{{"item_id":"{known}"}}],"candidates":["nope"]}}"#), StatusCode::NOT_FOUND),
        (&*format!(r#"{{"history":[{{"item_id":"nope"}}],"candidates":["{known}"]}}"#), StatusCode::NOT_FOUND),
        (&*format!(r#"{{"user_id":"nobody","candidates":["{known}"]}}"#), StatusCode::NOT_FOUND),
    ];
    for (body, want) in cases {
        assert_eq!(call(&engine, post(body)).await.0, want, "{body}");
    }
    let lenient =
        format!(r#"{{"history":[{{"item_id":"{known}"}}],"candidates":["nope","{known}"],"mode":"lenient"}}"#);
    let (s, v) = call(&engine, post(&lenient)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["dropped"], json!(["nope"]));
    assert_eq!(v["items"].as_array().unwrap().len(), 1);

    let (s, v) = call(&engine, get(&format!("/items/{known}/personas"))).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v["personas"].as_array().is_some());
    assert_eq!(call(&engine, get("/items/nope/personas")).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn stored_profiles_resolve_by_user_id() {
    let ws = Workspace::built(40, 300);
    let engine = loaded(&ws);
    let state = engine.current().unwrap();
    let user = state.profiles.keys().min().unwrap().clone();
    let candidates: Vec<String> = item_ids(&ws).into_iter().take(10).collect();
    let (s, v) = call(&engine, post(&json!({ "user_id": user, "candidates": candidates }).to_string())).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["items"].as_array().unwrap().len(), 10);
}

#[tokio::test]
async fn swapping_state_changes_the_build_id() {
    let ws = Workspace::built(40, 300);
    let engine = loaded(&ws);
    let ids = item_ids(&ws);
    let body = json!({ "history": [{ "item_id": ids[0] }], "candidates": ids[1..6] }).to_string();
    let (_, before) = call(&engine, post(&body)).await;

    ws.run(&["train", "--seed", "9"]).unwrap();
    ws.run(&["index", "build"]).unwrap();
    engine.swap(load_engine_state(&ws.config(&[])).unwrap());
    let (s, after) = call(&engine, post(&body)).await;
    assert_eq!(s, StatusCode::OK);
    assert_ne!(before["build_id"], after["build_id"]);
    assert_ne!(before["head_hash"], after["head_hash"]);
}

fn queued_engine(ws: &Workspace, llm: Arc<ThreadCountingLlm>) -> Arc<RerankEngine> {
    let store = Arc::new(AspectStore::default());
    let queue = AspectQueue::start(
        llm,
        PromptTemplates::default(),
        AspectSchema::default(),
        PipelineSettings::default(),
        Arc::clone(&store),
    );
    let engine = RerankEngine::with_state(load_engine_state(&ws.config(&[])).unwrap()).with_queue(queue, store);
    Arc::new(engine)
}

#[tokio::test]
async fn inline_reviews_are_extracted_off_the_request_path() {
    let ws = Workspace::built(40, 300);
    let llm = ThreadCountingLlm::new(0);
    let engine = queued_engine(&ws, Arc::clone(&llm));
    let ids = item_ids(&ws);
    let body = json!({
        "history": [{ "item_id": ids[0], "review": "I liked the romance. read it on the train" }],
        "candidates": ids[1..11],
    })
    .to_string();
    let (_, cold) = call(&engine, post(&body)).await;
    for _ in 0..200 {
        if engine.queue().unwrap().completed() >= 1 {
            break;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    assert_eq!(engine.aspects().len(), 1);
    let (_, warm) = call(&engine, post(&body)).await;
    assert_eq!(llm.hot_path.load(Ordering::SeqCst), 0);
    assert_eq!(llm.queued.load(Ordering::SeqCst), 1);
    // The cached tuple now feeds the interaction encoding.
    let scores =
        |v: &Value| v["items"].as_array().unwrap().iter().map(|i| i["score"].as_f64().unwrap()).collect::<Vec<_>>();
    assert_ne!(scores(&cold), scores(&warm));
}

fn trimmed_mean(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let keep = &xs[..xs.len() * 95 / 100];
    keep.iter().sum::<f64>() / keep.len() as f64
}

#[test]
fn queued_extraction_does_not_slow_requests() {
    let ws = Workspace::built(60, 500);
    let ids = item_ids(&ws);
    let plain = RerankEngine::with_state(load_engine_state(&ws.config(&[])).unwrap());
    let llm = ThreadCountingLlm::new(2);
    let queued = queued_engine(&ws, Arc::clone(&llm));
    let request = |i: usize| RerankRequest {
        user_id: None,
        history: vec![HistoryEntry { item_id: ids[i % 10].clone(), review: Some(format!("I liked the mystery {i}")) }],
        candidates: ids[10..30].to_vec(),
        mode: Default::default(),
    };
    let time = |engine: &RerankEngine, req: &RerankRequest| {
        let t = Instant::now();
        engine.rerank(req).unwrap();
        t.elapsed().as_secs_f64()
    };
    for i in 0..20 {
        time(&plain, &request(i));
    }
    let (mut with_queue, mut without) = (Vec::new(), Vec::new());
    for i in 0..300 {
        let req = request(i);
        without.push(time(&plain, &req));
        with_queue.push(time(&queued, &req));
    }
    assert!(queued.queue().unwrap().enqueued() >= 300);
    let (a, b) = (trimmed_mean(with_queue), trimmed_mean(without));
    assert!(a < 2.0 * b, "queued {a:.6}s vs plain {b:.6}s");
    assert_eq!(llm.hot_path.load(Ordering::SeqCst), 0);
}
