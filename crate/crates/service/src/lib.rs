//! HTTP front end for learning sessions, plus the `nse-afs` command line.
//!
//! All routes live under `/v1` and speak JSON:
//!
//! | method | path                          | body / query             | response            |
//! |--------|-------------------------------|--------------------------|---------------------|
//! | POST   | `/v1/sessions`                | `SessionConfig`          | 201 `SessionSummary` |
//! | GET    | `/v1/sessions/{id}`           |                          | `SessionSummary`    |
//! | GET    | `/v1/sessions/{id}/query`     |                          | `QueryView`         |
//! | POST   | `/v1/sessions/{id}/feedback`  | `FeedbackSubmission`     | `SessionSummary`    |
//! | POST   | `/v1/sessions/{id}/step`      | `{"max_iterations": n}`  | `SessionSummary`    |
//! | GET    | `/v1/sessions/{id}/model`     | `?metrics=true`          | `ModelView`         |
//! | GET    | `/v1/sessions/{id}/runlog`    |                          | JSONL run log       |
//! | GET    | `/v1/sessions/{id}/events`    |                          | JSONL event log     |
//! | GET    | `/v1/formats`                 |                          | `[FormatInfo]`      |
//!
//! Errors come back as `{"error": {"code", "message", "field"?, "item"?}}`.

pub mod cli;
pub mod store;

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use nse_afs::experiments::runlog_to_string;
use nse_afs::feedback::{FeedbackFormat, PreferenceModel};
use nse_afs::session::{write_event, FeedbackSubmission, ModelView, QueryView, SessionConfig, SessionSummary};

pub use store::SessionStore;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("no session with id {0}")]
    NotFound(String),
    #[error(transparent)]
    Core(#[from] nse_afs::Error),
    #[error("worker failed: {0}")]
    Internal(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        use nse_afs::Error as E;
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
            ApiError::Core(e) => match e {
                E::Conflict(_) => StatusCode::CONFLICT,
                E::SessionExhausted(_) => StatusCode::GONE,
                E::MalformedResponse { .. } => StatusCode::UNPROCESSABLE_ENTITY,
                E::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
                _ => StatusCode::BAD_REQUEST,
            },
        }
    }

    pub fn body(&self) -> ErrorBody {
        use nse_afs::Error as E;
        let (code, field, item) = match self {
            ApiError::NotFound(_) => ("not_found", None, None),
            ApiError::Internal(_) => ("internal", None, None),
            ApiError::Core(e) => match e {
                E::Conflict(_) => ("conflict", None, None),
                E::SessionExhausted(_) => ("exhausted", None, None),
                E::MalformedResponse { item, .. } => ("malformed_response", None, Some(*item)),
                E::Config { field, .. } => ("invalid_config", Some(field.clone()), None),
                E::Json(_) => ("invalid_json", None, None),
                E::Io(_) => ("io", None, None),
                _ => ("invalid_request", None, None),
            },
        };
        ErrorBody { error: ErrorDetail { code: code.into(), message: self.to_string(), field, item } }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.body())).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::Core(nse_afs::Error::Json(e)))
}

/// Runs `f` on a blocking worker with the session locked, then appends any
/// new events to the session's log.
async fn with_session<T: Send + 'static>(
    store: Arc<SessionStore>,
    id: String,
    f: impl FnOnce(&mut nse_afs::session::Session) -> nse_afs::Result<T> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(move || {
        let handle = store.get(&id)?;
        let mut guard = handle.lock().unwrap();
        let before = guard.events().len();
        let out = f(&mut guard)?;
        store.persist(&guard, before)?;
        Ok(out)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn create_session(State(store): State<Arc<SessionStore>>, body: Bytes) -> ApiResult<(StatusCode, Json<SessionSummary>)> {
    let config: SessionConfig = parse_body(&body)?;
    let summary = tokio::task::spawn_blocking(move || -> ApiResult<SessionSummary> {
        let handle = store.create(config)?;
        let summary = handle.lock().unwrap().status();
        Ok(summary)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn session_status(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<Json<SessionSummary>> {
    with_session(store, id, |s| Ok(s.status())).await.map(Json)
}

async fn next_query(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<Json<QueryView>> {
    with_session(store, id, |s| s.next_query()).await.map(Json)
}

async fn submit_feedback(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<SessionSummary>> {
    let submission: FeedbackSubmission = parse_body(&body)?;
    with_session(store, id, move |s| s.submit(submission)).await.map(Json)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepRequest {
    #[serde(default)]
    max_iterations: Option<u32>,
}

async fn step(State(store): State<Arc<SessionStore>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<SessionSummary>> {
    let req: StepRequest = if body.is_empty() { StepRequest::default() } else { parse_body(&body)? };
    with_session(store, id, move |s| s.step(req.max_iterations)).await.map(Json)
}

#[derive(Debug, Default, Deserialize)]
struct ModelParams {
    #[serde(default)]
    metrics: bool,
}

async fn model_view(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    Query(params): Query<ModelParams>,
) -> ApiResult<Json<ModelView>> {
    with_session(store, id, move |s| s.model_view(params.metrics)).await.map(Json)
}

fn jsonl(text: String) -> Response {
    ([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response()
}

async fn run_log(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<Response> {
    with_session(store, id, |s| runlog_to_string(s.run_log())).await.map(jsonl)
}

async fn event_log(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<Response> {
    let text = with_session(store, id, |s| {
        let mut buf = Vec::new();
        for e in s.events() {
            write_event(&mut buf, e)?;
        }
        Ok(String::from_utf8(buf).expect("json is utf-8"))
    })
    .await?;
    Ok(jsonl(text))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatInfo {
    pub format: FeedbackFormat,
    pub psi: f64,
    pub cost: f64,
    pub annotated: bool,
}

pub fn format_table(pref: &PreferenceModel) -> Vec<FormatInfo> {
    pref.entries()
        .iter()
        .map(|e| FormatInfo { format: e.format, psi: e.psi, cost: e.cost, annotated: e.format.is_annotated() })
        .collect()
}

async fn formats() -> Json<Vec<FormatInfo>> {
    Json(format_table(&PreferenceModel::defaults()))
}

pub fn router(store: Arc<SessionStore>) -> Router {
    Router::new()
        .route("/v1/formats", get(formats))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(session_status))
        .route("/v1/sessions/{id}/query", get(next_query))
        .route("/v1/sessions/{id}/feedback", post(submit_feedback))
        .route("/v1/sessions/{id}/step", post(step))
        .route("/v1/sessions/{id}/model", get(model_view))
        .route("/v1/sessions/{id}/runlog", get(run_log))
        .route("/v1/sessions/{id}/events", get(event_log))
        .with_state(store)
}

/// Serves until ctrl-c.
pub async fn serve(addr: std::net::SocketAddr, store: Arc<SessionStore>) -> std::io::Result<()> {
    serve_on(tokio::net::TcpListener::bind(addr).await?, store).await
}

pub async fn serve_on(listener: tokio::net::TcpListener, store: Arc<SessionStore>) -> std::io::Result<()> {
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
