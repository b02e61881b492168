//! HTTP service for the trigger refinement loop.
//!
//! Routes:
//!
//! | method | path               | body / query                         | reply |
//! |--------|--------------------|--------------------------------------|-------|
//! | GET    | `/api/examples`    | `cursor` (offset), `limit` (1..=500) | `Page` |
//! | POST   | `/api/judgments`   | `JudgmentInput` JSON                 | 201 + stored `Judgment` |
//! | GET    | `/api/progress`    |                                      | `Progress` |
//! | GET    | `/`                | static UI assets when configured     | |
//!
//! Errors are `{"error": "..."}` with status 400 (bad query or body) or 404
//! (unknown sentence, entity or rank). A judgment is written and synced to
//! the log before the 201 is sent.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use autotrig::corpus::read_triggers;
use autotrig::extract::read_scores;
use autotrig::refine::{
    now_utc_seconds, read_log, Judgment, JudgmentInput, JudgmentLog, Progress, RefineSession, DEFAULT_PAGE_LIMIT,
};
use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::ServeDir;

struct Inner {
    session: RefineSession,
    log: JudgmentLog,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<RwLock<Inner>>,
}

impl AppState {
    /// `session` must already hold every judgment in `log`.
    pub fn new(session: RefineSession, log: JudgmentLog) -> Self {
        AppState { inner: Arc::new(RwLock::new(Inner { session, log })) }
    }

    /// Loads the auto dataset, optional score sidecar and existing log.
    pub fn open(
        dataset: &Path,
        scores: Option<&Path>,
        log: &Path,
        k_shown: usize,
        k_export: usize,
    ) -> autotrig::Result<Self> {
        let data = read_triggers(dataset)?;
        let scores = scores.map(read_scores).transpose()?;
        let session = RefineSession::new(data, scores.as_deref(), k_shown, k_export, read_log(log)?)?;
        Ok(AppState::new(session, JudgmentLog::open(log)?))
    }

    pub fn export(&self) -> autotrig::Result<Vec<autotrig::corpus::TriggerLabeledExample>> {
        self.inner.read().expect("state lock").session.export_refined()
    }
}

#[derive(Clone, Debug, Default)]
pub struct ServiceOptions {
    /// Directory served at `/`.
    pub static_dir: Option<PathBuf>,
    /// Allowed CORS origin; any origin when `None`.
    pub cors_origin: Option<String>,
}

impl ServiceOptions {
    pub fn validate(&self) -> Result<(), String> {
        match &self.cors_origin {
            Some(o) if HeaderValue::from_str(o).is_err() => Err(format!("invalid CORS origin {o:?}")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    msg: String,
}

impl ApiError {
    fn bad_request(msg: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, msg: msg.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.msg }))).into_response()
    }
}

#[derive(Debug, Deserialize)]
struct PageQuery {
    cursor: Option<String>,
    limit: Option<String>,
}

async fn examples(
    State(state): State<AppState>,
    query: Result<Query<PageQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let limit = match q.limit.as_deref() {
        None => DEFAULT_PAGE_LIMIT,
        Some(s) => s.parse().map_err(|_| ApiError::bad_request(format!("bad limit {s:?}")))?,
    };
    let inner = state.inner.read().expect("state lock");
    let page = inner.session.page(q.cursor.as_deref(), limit).map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Json(page).into_response())
}

async fn submit(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(&body);
    let input: JudgmentInput = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ApiError::bad_request(if path == "." { e.inner().to_string() } else { format!("{path}: {}", e.inner()) })
    })?;
    let judgment = Judgment::from_input(input, now_utc_seconds());
    let inner = state.inner.clone();
    tokio::task::spawn_blocking(move || {
        let mut guard = inner.write().expect("state lock");
        let Inner { session, log } = &mut *guard;
        session.check(&judgment).map_err(|r| ApiError { status: StatusCode::NOT_FOUND, msg: r.to_string() })?;
        log.append(&judgment).map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            msg: format!("could not persist judgment: {e}"),
        })?;
        session.record(judgment.clone()).expect("checked above");
        Ok((StatusCode::CREATED, Json(judgment)).into_response())
    })
    .await
    .map_err(|e| ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, msg: e.to_string() })?
}

async fn progress(State(state): State<AppState>) -> Json<Progress> {
    Json(state.inner.read().expect("state lock").session.progress())
}

const INDEX: &str = "<!doctype html><title>trigger refinement</title>\
<p>API: GET /api/examples, POST /api/judgments, GET /api/progress</p>";

/// An origin that is not a valid header value allows no cross-origin
/// requests; see [`ServiceOptions::validate`].
pub fn router(state: AppState, opts: &ServiceOptions) -> Router {
    let cors = match &opts.cors_origin {
        Some(o) => match HeaderValue::from_str(o) {
            Ok(v) => CorsLayer::new().allow_origin(AllowOrigin::exact(v)),
            Err(_) => CorsLayer::new(),
        },
        None => CorsLayer::new().allow_origin(Any),
    }
    .allow_methods(Any)
    .allow_headers(Any);
    let api = Router::new()
        .route("/api/examples", get(examples))
        .route("/api/judgments", post(submit))
        .route("/api/progress", get(progress))
        .with_state(state);
    let app = match &opts.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(INDEX) })),
    };
    app.layer(cors)
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr, state: AppState, opts: ServiceOptions) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, &opts))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
