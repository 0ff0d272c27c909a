//! HTTP front end for [`RerankEngine`].

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use personarank::config::RunConfig;
use personarank::online::{OnlineError, RerankEngine, RerankRequest};
use serde_json::json;

use crate::commands::{load_engine_state, make_engine};
use crate::error::CliError;

pub fn router(engine: Arc<RerankEngine>) -> Router {
    Router::new()
        .route("/rerank", post(rerank))
        .route("/items/{id}/personas", get(personas))
        .route("/healthz", get(healthz))
        .with_state(engine)
}

fn status_of(e: &OnlineError) -> StatusCode {
    match e {
        OnlineError::BadRequest(_) => StatusCode::BAD_REQUEST,
        OnlineError::UnknownItem(_) | OnlineError::UnknownUser(_) => StatusCode::NOT_FOUND,
        OnlineError::NotReady => StatusCode::SERVICE_UNAVAILABLE,
        OnlineError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

fn error_response(e: &OnlineError) -> Response {
    let mut body = json!({ "error": e.to_string() });
    if let OnlineError::UnknownItem(ids) = e {
        body["unknown_items"] = json!(ids);
    }
    (status_of(e), Json(body)).into_response()
}

async fn rerank(State(engine): State<Arc<RerankEngine>>, body: Bytes) -> Response {
    let req: RerankRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_response(&OnlineError::BadRequest(e.to_string())),
    };
    match tokio::task::spawn_blocking(move || engine.rerank(&req)).await {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e)) => error_response(&e),
        Err(e) => error_response(&OnlineError::Internal(e.to_string())),
    }
}

async fn personas(State(engine): State<Arc<RerankEngine>>, Path(id): Path<String>) -> Response {
    match engine.personas(&id) {
        Ok(p) => Json(json!({ "item_id": id, "personas": p })).into_response(),
        Err(e) => error_response(&e),
    }
}

async fn healthz(State(engine): State<Arc<RerankEngine>>) -> Response {
    match engine.current() {
        Some(state) => Json(json!({
            "status": "ok",
            "build_id": state.index.build_id(),
            "head_hash": state.index.metadata().head_hash,
            "items": state.index.len(),
        }))
        .into_response(),
        None => (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "status": "loading" }))).into_response(),
    }
}

/// Bind, load the artifacts in the background and serve until Ctrl-C.
pub fn run(cfg: &RunConfig, mock: bool) -> Result<serde_json::Value, CliError> {
    let engine = Arc::new(make_engine(cfg, mock)?);
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Service(e.to_string()))?;
    let addr = format!("{}:{}", cfg.service.host, cfg.service.port);
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Service(format!("cannot bind {addr}: {e}")))?;
        log::info!("listening on {addr}");
        let loader = {
            let engine = Arc::clone(&engine);
            let cfg = cfg.clone();
            tokio::task::spawn_blocking(move || {
                let state = load_engine_state(&cfg)?;
                log::info!("index {} loaded", state.index.build_id());
                engine.swap(state);
                Ok::<_, CliError>(())
            })
        };
        // A failed load ends the service; a successful one leaves it running.
        let load_failed = async {
            match loader.await {
                Ok(Ok(())) => std::future::pending().await,
                Ok(Err(e)) => e,
                Err(e) => CliError::Service(e.to_string()),
            }
        };
        let server = axum::serve(listener, router(Arc::clone(&engine))).with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        });
        tokio::select! {
            served = server => served.map_err(|e| CliError::Service(e.to_string())),
            e = load_failed => Err(e),
        }
    })?;
    Ok(json!({ "stopped": addr }))
}
