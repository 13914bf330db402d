//! JSON-over-HTTP route service.
//!
//! Readers clone an `Arc` to the current snapshot and work on it without
//! holding any lock, so a response is always computed against one
//! database version. Feedback writes are serialized by a mutex, applied to
//! a copy and published by swapping the snapshot pointer.

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use tpc_core::routing::{DailyPattern, RoutePlan, RoutingError};
use tpc_core::time::parse_time_of_day;
use tpc_core::RouteDb;

use crate::formats::{write_route_db, FormatError};

pub struct Snapshot {
    pub version: u64,
    pub db: RouteDb,
}

pub struct AppState {
    current: RwLock<Arc<Snapshot>>,
    writer: tokio::sync::Mutex<()>,
    alpha: f64,
}

impl AppState {
    pub fn new(db: RouteDb, alpha: f64) -> Self {
        AppState {
            current: RwLock::new(Arc::new(Snapshot { version: 0, db })),
            writer: tokio::sync::Mutex::new(()),
            alpha,
        }
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn publish(&self, snap: Snapshot) {
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(snap);
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server failed: {0}")]
    Server(std::io::Error),
    #[error("cannot flush route database: {0}")]
    Flush(#[from] FormatError),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RouteRequest {
    pub from: String,
    pub to: String,
    /// `HH:MM` or `HH:MM:SS`.
    pub depart: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RouteResponse {
    #[serde(flatten)]
    pub plan: RoutePlan,
    pub version: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub segment: String,
    pub time: String,
    pub speed_kmph: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FeedbackAck {
    pub accepted: bool,
    pub version: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PatternResponse {
    #[serde(flatten)]
    pub pattern: DailyPattern,
    pub version: u64,
}

#[derive(Debug, Deserialize)]
struct PatternQuery {
    segment: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub kind: String,
}

struct ApiError(StatusCode, &'static str, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.2, kind: self.1.into() })).into_response()
    }
}

impl From<RoutingError> for ApiError {
    fn from(e: RoutingError) -> Self {
        let (status, kind) = match &e {
            RoutingError::UnknownVertex(_) => (StatusCode::NOT_FOUND, "unknown_vertex"),
            RoutingError::UnknownSegment(_) => (StatusCode::NOT_FOUND, "unknown_segment"),
            RoutingError::NoPath => (StatusCode::NOT_FOUND, "no_path"),
            RoutingError::BadAlpha
            | RoutingError::BadSpeed
            | RoutingError::BadTime
            | RoutingError::BadClass(_)
            | RoutingError::BadFactors
            | RoutingError::MissingInterval(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            RoutingError::ZeroSpeed(_) | RoutingError::InvalidDb(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError(status, kind, e.to_string())
    }
}

/// Syntax errors are 400; well-formed JSON of the wrong shape is 422.
fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => ApiError(StatusCode::UNPROCESSABLE_ENTITY, "validation", e.to_string()),
        _ => ApiError(StatusCode::BAD_REQUEST, "malformed", e.to_string()),
    })
}

fn time_of_day(text: &str) -> Result<f64, ApiError> {
    parse_time_of_day(text)
        .map(f64::from)
        .map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, "validation", e.to_string()))
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn route(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<RouteResponse>, ApiError> {
    let req: RouteRequest = parse_body(&body)?;
    let depart = time_of_day(&req.depart)?;
    let snap = state.snapshot();
    let plan = snap.db.best_route(&req.from, &req.to, depart)?;
    Ok(Json(RouteResponse { plan, version: snap.version }))
}

async fn feedback(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<FeedbackAck>, ApiError> {
    let req: FeedbackRequest = parse_body(&body)?;
    let t = time_of_day(&req.time)?;
    let _guard = state.writer.lock().await;
    let snap = state.snapshot();
    let mut db = snap.db.clone();
    db.apply_feedback(&req.segment, t, req.speed_kmph, state.alpha)?;
    let version = snap.version + 1;
    state.publish(Snapshot { version, db });
    Ok(Json(FeedbackAck { accepted: true, version }))
}

async fn patterns(
    State(state): State<Arc<AppState>>,
    q: Result<Query<PatternQuery>, QueryRejection>,
) -> Result<Json<PatternResponse>, ApiError> {
    let Query(q) = q.map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, "validation", e.body_text()))?;
    let snap = state.snapshot();
    let pattern = snap.db.pattern_for(&q.segment)?;
    Ok(Json(PatternResponse { pattern, version: snap.version }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/route", post(route))
        .route("/feedback", post(feedback))
        .route("/patterns", get(patterns))
        .with_state(state)
}

/// Serves on `listener` until `shutdown` resolves, then writes the current
/// database to `flush_to` (if given).
pub async fn serve_with_shutdown(
    listener: TcpListener,
    state: Arc<AppState>,
    flush_to: Option<PathBuf>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(ServeError::Server)?;
    if let Some(path) = flush_to {
        let _guard = state.writer.lock().await;
        write_route_db(&path, &state.snapshot().db)?;
    }
    Ok(())
}

pub async fn bind(addr: SocketAddr) -> Result<TcpListener, ServeError> {
    TcpListener::bind(addr).await.map_err(|source| ServeError::Bind { addr, source })
}

/// Resolves on Ctrl-C or, on Unix, SIGTERM.
pub async fn interrupt() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    {
        let term = async {
            match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
                Ok(mut s) => {
                    s.recv().await;
                }
                Err(_) => std::future::pending::<()>().await,
            }
        };
        tokio::select! {
            _ = ctrl_c => {},
            _ = term => {},
        }
    }
    #[cfg(not(unix))]
    ctrl_c.await;
}
