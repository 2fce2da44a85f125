//! HTTP relighting service under `/v1`.
//!
//! Scenes are loaded once and shared read-only; each request works on its
//! own copy of the outputs, so handlers need no locking.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use relightkit::edit::{apply_edit, EditOutcome, EditRequest, SceneLibrary, SceneSummary};
use relightkit::light::{DeltaL, LightParams};
use relightkit::mask::MaskPredictor;
use relightkit::metrics::PairScores;
use relightkit::Error;
use serde::Serialize;
use tower_http::services::ServeDir;

#[derive(Clone)]
pub struct AppState {
    pub library: Arc<SceneLibrary>,
    pub predictor: Option<Arc<MaskPredictor>>,
    pub exposure: f64,
}

#[derive(Debug, Serialize)]
pub struct SceneList {
    pub scenes: Vec<SceneSummary>,
}

#[derive(Debug, Serialize)]
pub struct RelightResponse {
    pub png_base64: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_png_base64: Option<String>,
    pub delta_l: DeltaL,
    pub target_light: LightParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<PairScores>,
    pub timing_ms: f64,
}

impl RelightResponse {
    fn new(out: EditOutcome, timing_ms: f64) -> Self {
        RelightResponse {
            png_base64: B64.encode(&out.png),
            mask_png_base64: out.mask_png.as_ref().map(|m| B64.encode(m)),
            delta_l: out.delta,
            target_light: out.target_light,
            metrics: out.metrics,
            timing_ms,
        }
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

/// A failed request with its status code.
#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        json_response(self.0, &ErrorBody { error: self.1 })
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Range(_) | Error::Domain(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

/// JSON with floats at full precision.
fn json_response<T: Serialize>(status: StatusCode, value: &T) -> Response {
    match relightkit::json::to_string(value) {
        Ok(body) => (status, [(header::CONTENT_TYPE, "application/json")], body).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn list_scenes(State(state): State<AppState>) -> Response {
    json_response(
        StatusCode::OK,
        &SceneList {
            scenes: state.library.summaries(),
        },
    )
}

fn not_found(id: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("unknown scene {id:?}"))
}

async fn preview(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let scene = state.library.get(&id).ok_or_else(|| not_found(&id))?;
    let png = scene.preview_png(state.exposure)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn relight_handler(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: EditRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("malformed request: {e}")))?;
    let scene = state.library.get(&req.scene_id).ok_or_else(|| not_found(&req.scene_id))?;
    let start = Instant::now();
    let predictor = state.predictor.clone();
    let exposure = state.exposure;
    let out = tokio::task::spawn_blocking(move || apply_edit(&scene, &req, predictor.as_deref(), exposure))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let timing_ms = start.elapsed().as_secs_f64() * 1e3;
    log::debug!("relight in {timing_ms:.1} ms");
    Ok(json_response(StatusCode::OK, &RelightResponse::new(out, timing_ms)))
}

/// The `/v1` API, optionally serving static files for everything else.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/v1/scenes", get(list_scenes))
        .route("/v1/scenes/{id}/preview", get(preview))
        .route("/v1/relight", post(relight_handler))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(state: AppState, static_dir: Option<PathBuf>, addr: std::net::SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("serving {} scenes on http://{}", state.library.len(), listener.local_addr()?);
    axum::serve(listener, router(state, static_dir)).await?;
    Ok(())
}
