//! HTTP API for the human review tool.
//!
//! `GET /samples`, `GET /samples/{id}`, `POST /annotations`, `GET /summary`.
//! All state lives in a [`ReviewStore`]; an optional directory of static UI
//! assets is served at `/`.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use attrchain_core::review::{Annotation, ReviewError, ReviewStore, SampleQuery};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub error: String,
}

pub struct ApiError(ReviewError);

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            ReviewError::NotFound(_) => StatusCode::NOT_FOUND,
            ReviewError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ReviewError::NoAnnotations => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            tracing::error!(error = %self.0, "review request failed");
        }
        (status, Json(ErrorBody { error: self.0.to_string() })).into_response()
    }
}

type Shared = Arc<ReviewStore>;

async fn list_samples(State(store): State<Shared>, Query(query): Query<SampleQuery>) -> impl IntoResponse {
    Json(store.list(&query))
}

async fn get_sample(State(store): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(store.get(&id)?))
}

async fn submit(State(store): State<Shared>, Json(annotation): Json<Annotation>) -> Result<impl IntoResponse, ApiError> {
    // appends touch the filesystem
    let stored = tokio::task::spawn_blocking(move || store.submit(annotation))
        .await
        .map_err(|e| ReviewError::Io(std::io::Error::other(e)))??;
    Ok((StatusCode::CREATED, Json(stored)))
}

async fn summary(State(store): State<Shared>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(store.summary()?))
}

pub fn router(store: Shared, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/samples", get(list_samples))
        .route("/samples/{id}", get(get_sample))
        .route("/annotations", post(submit))
        .route("/summary", get(summary))
        .with_state(store);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// A bound, running server.
pub struct Running {
    pub addr: SocketAddr,
    pub handle: tokio::task::JoinHandle<std::io::Result<()>>,
}

/// Binds `addr` and serves in a background task.
pub async fn spawn(addr: SocketAddr, store: Shared, static_dir: Option<PathBuf>) -> std::io::Result<Running> {
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let app = router(store, static_dir);
    let handle = tokio::spawn(async move { axum::serve(listener, app).await });
    Ok(Running { addr, handle })
}

/// Serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, store: Shared, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "review server listening");
    axum::serve(listener, router(store, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
