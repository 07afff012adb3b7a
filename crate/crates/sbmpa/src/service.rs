//! HTTP service for accepting or rejecting candidate (object, label) pairs.
//!
//! Endpoints, all JSON; errors are `{"error": ..., "detail": ...}`:
//!
//! - `GET  /api/queue?status=pending|accepted|rejected&limit=N`
//! - `POST /api/decisions` with `{object_id, candidate_label, decision, annotator}`
//! - `GET  /api/objects/{id}`
//! - `GET  /api/export?merges=PATH`
//!
//! View images are served from `/views/` and an optional UI bundle from `/`.

use std::collections::BTreeMap;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use sbmpa_core::curation::{
    CurationCandidate, CurationError, CurationQueueItem, CurationState, LabelSet, MergeMap, QueueStatus, StatusCounts,
};
use sbmpa_core::{AggregateDistribution, CurationDecision, Decision, LabelRecord, Timestamp};

use crate::store::{append_record, load_merges, read_records, StoreError};

pub const DEFAULT_PORT: u16 = 7878;

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Timestamp::from_unix(secs as i64)
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub candidates: PathBuf,
    pub decisions: PathBuf,
    pub aggregates: Option<PathBuf>,
    pub views_dir: Option<PathBuf>,
    pub ui_dir: Option<PathBuf>,
    /// Used by `/api/export` when the request names no merge file.
    pub merges: Option<PathBuf>,
    pub bind: IpAddr,
    pub port: u16,
    /// When set, `/api/*` requires `Authorization: Bearer <token>`.
    pub token: Option<String>,
}

impl ServiceConfig {
    pub fn new(candidates: PathBuf, decisions: PathBuf) -> Self {
        ServiceConfig {
            candidates,
            decisions,
            aggregates: None,
            views_dir: None,
            ui_dir: None,
            merges: None,
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: DEFAULT_PORT,
            token: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Invalid(String),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server error: {0}")]
    Serve(std::io::Error),
}

struct Derived {
    log: Vec<CurationDecision>,
    statuses: Vec<QueueStatus>,
}

pub struct AppState {
    curation: CurationState,
    aggregates: BTreeMap<(String, String), AggregateDistribution>,
    decisions_path: PathBuf,
    default_merges: Option<PathBuf>,
    token: Option<String>,
    clock: Box<dyn Clock>,
    derived: RwLock<Derived>,
    writer: tokio::sync::Mutex<()>,
}

impl AppState {
    /// Loads candidates, the decision log (missing file = empty log) and aggregates.
    pub fn load(config: &ServiceConfig, clock: Box<dyn Clock>) -> Result<Self, ServiceError> {
        let candidates: Vec<CurationCandidate> = read_records(&config.candidates)?;
        let curation = CurationState::new(candidates).map_err(|e| ServiceError::Invalid(e.to_string()))?;
        let log: Vec<CurationDecision> =
            if config.decisions.exists() { read_records(&config.decisions)? } else { Vec::new() };
        let aggregates = match &config.aggregates {
            Some(path) => read_records::<AggregateDistribution>(path)?
                .into_iter()
                .map(|d| ((d.object_id.clone(), d.property.clone()), d))
                .collect(),
            None => BTreeMap::new(),
        };
        if let Some(path) = &config.merges {
            load_merges(path)?;
        }
        let statuses = curation.statuses(&log);
        Ok(AppState {
            curation,
            aggregates,
            decisions_path: config.decisions.clone(),
            default_merges: config.merges.clone(),
            token: config.token.clone(),
            clock,
            derived: RwLock::new(Derived { log, statuses }),
            writer: tokio::sync::Mutex::new(()),
        })
    }

    pub fn counts(&self) -> StatusCounts {
        let d = self.derived.read().expect("state lock");
        self.curation.counts(&d.log)
    }

    fn aggregate_for(&self, c: &CurationCandidate) -> Option<&AggregateDistribution> {
        self.aggregates.get(&(c.object_id.clone(), c.property.clone()))
    }
}

struct ApiError {
    status: StatusCode,
    error: &'static str,
    detail: String,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, detail: impl Into<String>) -> Self {
        ApiError { status, error, detail: detail.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.error, "detail": self.detail }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Deserialize)]
struct QueueQuery {
    status: Option<String>,
    limit: Option<String>,
}

async fn queue(State(state): State<Arc<AppState>>, Query(q): Query<QueueQuery>) -> ApiResult<Json<Vec<CurationQueueItem>>> {
    let status = match q.status.as_deref() {
        None => QueueStatus::Pending,
        Some(s) => s.parse().map_err(|e: String| ApiError::new(StatusCode::BAD_REQUEST, "bad_status", e))?,
    };
    let limit = match q.limit.as_deref() {
        None => usize::MAX,
        Some(s) => s.parse().map_err(|_| {
            ApiError::new(StatusCode::BAD_REQUEST, "bad_limit", format!("limit must be a non-negative integer, got {s:?}"))
        })?,
    };
    let d = state.derived.read().expect("state lock");
    let items = state
        .curation
        .candidates()
        .iter()
        .zip(&d.statuses)
        .filter(|(_, s)| **s == status)
        .take(limit)
        .map(|(c, s)| CurationQueueItem {
            object_id: c.object_id.clone(),
            candidate_label: c.candidate_label.clone(),
            property: c.property.clone(),
            view_refs: c.view_refs.clone(),
            aggregate: state.aggregate_for(c).cloned(),
            status: *s,
        })
        .collect();
    Ok(Json(items))
}

#[derive(Debug, Deserialize)]
struct DecisionBody {
    object_id: String,
    candidate_label: String,
    decision: String,
    #[serde(default)]
    annotator: Option<String>,
}

async fn post_decision(State(state): State<Arc<AppState>>, body: String) -> ApiResult<Response> {
    let value: Value = serde_json::from_str(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_json", e.to_string()))?;
    let body: DecisionBody = serde_json::from_value(value)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))?;
    let decision: Decision = body
        .decision
        .parse()
        .map_err(|e: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_decision", e))?;

    // One writer at a time; readers keep going until the derived state swaps.
    let _writer = state.writer.lock().await;
    {
        let d = state.derived.read().expect("state lock");
        let existing = state
            .curation
            .existing_equivalent(&d.log, &body.object_id, &body.candidate_label, decision)
            .map_err(|e| match e {
                CurationError::UnknownPair(..) => ApiError::new(StatusCode::NOT_FOUND, "unknown_pair", e.to_string()),
                other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
            })?;
        if let Some(existing) = existing {
            return Ok((StatusCode::OK, Json(existing.clone())).into_response());
        }
    }
    let record = CurationDecision {
        object_id: body.object_id,
        candidate_label: body.candidate_label,
        decision,
        annotator: body.annotator.filter(|a| !a.trim().is_empty()).unwrap_or_else(|| "anonymous".into()),
        timestamp: state.clock.now(),
    };
    let path = state.decisions_path.clone();
    let to_write = record.clone();
    tokio::task::spawn_blocking(move || append_record(&path, &to_write))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "log_write_failed", e.to_string()))?;
    {
        let mut d = state.derived.write().expect("state lock");
        d.log.push(record.clone());
        d.statuses = state.curation.statuses(&d.log);
    }
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

#[derive(Debug, Serialize)]
struct CandidateView {
    candidate_label: String,
    property: String,
    status: QueueStatus,
}

#[derive(Debug, Serialize)]
struct ObjectPayload {
    object_id: String,
    view_refs: Vec<String>,
    /// First candidate in label order; all of them are in `candidates`.
    candidate_label: String,
    candidates: Vec<CandidateView>,
    #[serde(skip_serializing_if = "Option::is_none")]
    aggregate: Option<AggregateDistribution>,
}

async fn object(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<ObjectPayload>> {
    let d = state.derived.read().expect("state lock");
    let rows: Vec<(&CurationCandidate, QueueStatus)> = state
        .curation
        .candidates()
        .iter()
        .zip(d.statuses.iter().copied())
        .filter(|(c, _)| c.object_id == id)
        .collect();
    let Some((first, _)) = rows.first() else {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_object", format!("no candidates for object {id:?}")));
    };
    let mut view_refs = Vec::new();
    for (c, _) in &rows {
        for v in &c.view_refs {
            if !view_refs.contains(v) {
                view_refs.push(v.clone());
            }
        }
    }
    Ok(Json(ObjectPayload {
        object_id: id.clone(),
        view_refs,
        candidate_label: first.candidate_label.clone(),
        aggregate: state.aggregate_for(first).cloned(),
        candidates: rows
            .iter()
            .map(|(c, s)| CandidateView { candidate_label: c.candidate_label.clone(), property: c.property.clone(), status: *s })
            .collect(),
    }))
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    merges: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ExportPayload {
    records: Vec<LabelRecord>,
    histogram: BTreeMap<String, usize>,
}

async fn export(State(state): State<Arc<AppState>>, Query(q): Query<ExportQuery>) -> ApiResult<Json<ExportPayload>> {
    let merges = match q.merges.as_ref().or(state.default_merges.as_ref()) {
        Some(path) => {
            let path = path.clone();
            tokio::task::spawn_blocking(move || load_merges(&path))
                .await
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
                .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_merges", e.to_string()))?
        }
        None => MergeMap::empty(),
    };
    // The export reads the log from disk so it reflects exactly what was persisted.
    let path = state.decisions_path.clone();
    let log = tokio::task::spawn_blocking(move || read_log(&path))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "corrupt_log", e.to_string()))?;
    let set = state
        .curation
        .export(&log, &merges)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "export_failed", e.to_string()))?;
    Ok(Json(ExportPayload { records: set.records, histogram: set.histogram }))
}

fn read_log(path: &Path) -> Result<Vec<CurationDecision>, StoreError> {
    if path.exists() {
        read_records(path)
    } else {
        Ok(Vec::new())
    }
}

/// Offline export: the same label set `/api/export` would return.
pub fn export_labels(candidates: &Path, decisions: &Path, merges: Option<&Path>) -> Result<LabelSet, ServiceError> {
    let candidates: Vec<CurationCandidate> = read_records(candidates)?;
    let state = CurationState::new(candidates).map_err(|e| ServiceError::Invalid(e.to_string()))?;
    let log = read_log(decisions)?;
    let merges = match merges {
        Some(p) => load_merges(p)?,
        None => MergeMap::empty(),
    };
    state.export(&log, &merges).map_err(|e| ServiceError::Invalid(e.to_string()))
}

async fn require_token(State(state): State<Arc<AppState>>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let ok = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token").into_response();
        }
    }
    next.run(request).await
}

async fn api_not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(state: Arc<AppState>, views_dir: Option<&Path>, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/queue", get(queue))
        .route("/decisions", post(post_decision))
        .route("/objects/{id}", get(object))
        .route("/export", get(export))
        .fallback(api_not_found)
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state);
    let mut app = Router::new().nest("/api", api);
    if let Some(dir) = views_dir {
        app = app.nest_service("/views", ServeDir::new(dir));
    }
    if let Some(dir) = ui_dir {
        app = app.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true));
    }
    app
}

/// A bound, not yet running, service. Useful for tests that need the port.
pub struct Bound {
    listener: tokio::net::TcpListener,
    app: Router,
}

impl Bound {
    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub async fn serve(self, shutdown: impl std::future::Future<Output = ()> + Send + 'static) -> Result<(), ServiceError> {
        axum::serve(self.listener, self.app).with_graceful_shutdown(shutdown).await.map_err(ServiceError::Serve)
    }
}

pub async fn bind(config: &ServiceConfig, clock: Box<dyn Clock>) -> Result<Bound, ServiceError> {
    let state = Arc::new(AppState::load(config, clock)?);
    let app = router(state, config.views_dir.as_deref(), config.ui_dir.as_deref());
    let addr = SocketAddr::new(config.bind, config.port);
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| ServiceError::Bind { addr, source })?;
    Ok(Bound { listener, app })
}
