use std::sync::Arc;
use std::time::Instant;

use axum::extract::multipart::MultipartError;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use thiserror::Error;

use dingdate_core::catalog::{ArtifactRecord, CatalogError};
use dingdate_core::dating::{DatingDecision, Outcome};
use dingdate_core::detect::{postprocess, DetectionBox};
use dingdate_core::imageproc::{decode, sniff_format, Image, ImageError};
use dingdate_core::pipeline::{infer_image, PipelineError};

use crate::state::AppState;

/// Multipart framing allowance on top of the image cap.
const MULTIPART_OVERHEAD: usize = 64 * 1024;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("upload exceeds {0} bytes")]
    PayloadTooLarge(usize),
    #[error("upload is not a JPEG or PNG image")]
    UnsupportedFormat,
    #[error("image could not be decoded: {0}")]
    CorruptImage(String),
    #[error("model is not loaded")]
    ModelNotLoaded,
    #[error("inference queue is full")]
    Overloaded,
    #[error("{0} not found")]
    NotFound(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::PayloadTooLarge(_) => StatusCode::PAYLOAD_TOO_LARGE,
            ApiError::UnsupportedFormat => StatusCode::UNSUPPORTED_MEDIA_TYPE,
            ApiError::CorruptImage(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::ModelNotLoaded | ApiError::Overloaded => StatusCode::SERVICE_UNAVAILABLE,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn code(&self) -> &'static str {
        match self {
            ApiError::PayloadTooLarge(_) => "payload_too_large",
            ApiError::UnsupportedFormat => "unsupported_format",
            ApiError::CorruptImage(_) => "corrupt_image",
            ApiError::ModelNotLoaded => "model_not_loaded",
            ApiError::Overloaded => "overloaded",
            ApiError::NotFound(_) => "not_found",
            ApiError::BadRequest(_) => "bad_request",
            ApiError::Internal(_) => "internal",
        }
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if matches!(self, ApiError::Internal(_)) {
            tracing::error!(error = %self, "request failed");
        }
        let body = ErrorBody {
            error: self.code(),
            message: self.to_string(),
        };
        (self.status(), Json(body)).into_response()
    }
}

impl From<ImageError> for ApiError {
    fn from(e: ImageError) -> Self {
        match e {
            ImageError::UnsupportedFormat => ApiError::UnsupportedFormat,
            ImageError::CorruptImage(m) => ApiError::CorruptImage(m),
            other => ApiError::CorruptImage(other.to_string()),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Image(e) => e.into(),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl From<tokio::task::JoinError> for ApiError {
    fn from(e: tokio::task::JoinError) -> Self {
        ApiError::Internal(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reference {
    pub artifact_id: String,
    pub similarity: f32,
    pub image_url: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Timing {
    pub decode: f64,
    pub inference: f64,
    pub detection: f64,
    pub retrieval: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatingResponse {
    pub decision: DatingDecision,
    pub boxes: Vec<DetectionBox>,
    pub references: Vec<Reference>,
    pub model_descriptor: String,
    pub warnings: Vec<String>,
    pub timing_ms: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Health {
    pub status: &'static str,
    pub model_loaded: bool,
    pub model_descriptor: Option<String>,
    pub catalog_size: usize,
    pub index_size: usize,
    pub detector_ok: bool,
}

pub fn image_url(id: &str) -> String {
    format!("/api/v1/artifacts/{id}/image")
}

fn millis(since: Instant) -> f64 {
    (since.elapsed().as_secs_f64() * 1e6).round() / 1e3
}

fn multipart_error(e: MultipartError, cap: usize) -> ApiError {
    if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::PayloadTooLarge(cap)
    } else {
        ApiError::BadRequest(e.body_text())
    }
}

/// Reads the first part of the form, enforcing the byte cap while streaming.
async fn read_upload(multipart: &mut Multipart, cap: usize) -> Result<Vec<u8>, ApiError> {
    let mut field = multipart
        .next_field()
        .await
        .map_err(|e| multipart_error(e, cap))?
        .ok_or_else(|| ApiError::BadRequest("form has no image part".into()))?;
    let mut bytes = Vec::new();
    while let Some(chunk) = field.chunk().await.map_err(|e| multipart_error(e, cap))? {
        if bytes.len() + chunk.len() > cap {
            return Err(ApiError::PayloadTooLarge(cap));
        }
        bytes.extend_from_slice(&chunk);
    }
    Ok(bytes)
}

fn retain(app: &AppState, bytes: &[u8], ext: &str) {
    let Some(dir) = &app.config.retain_uploads else {
        return;
    };
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or_default();
    let path = dir.join(format!("upload-{stamp}-{}.{ext}", app.next_upload_id()));
    if let Err(e) = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&path, bytes)) {
        tracing::warn!(path = %path.display(), error = %e, "could not retain upload");
    }
}

async fn date(State(app): State<Arc<AppState>>, mut multipart: Multipart) -> Result<Json<DatingResponse>, ApiError> {
    let started = Instant::now();
    let bytes = read_upload(&mut multipart, app.config.max_upload_bytes).await?;
    let format = sniff_format(&bytes).ok_or(ApiError::UnsupportedFormat)?;
    let snap = app.snapshot();
    let model = snap.model.clone().ok_or(ApiError::ModelNotLoaded)?;
    let admission = app.gate.admit().ok_or(ApiError::Overloaded)?;
    retain(&app, &bytes, format.extension());

    let t = Instant::now();
    let image: Arc<Image> = Arc::new(tokio::task::spawn_blocking(move || decode(&bytes)).await??);
    let decode_ms = millis(t);

    let t = Instant::now();
    let inference = {
        let _slot = app.gate.slot(&admission).await;
        let (image, model, cfg) = (image.clone(), model.clone(), app.preprocess());
        tokio::task::spawn_blocking(move || infer_image(&image, &model, &cfg)).await??
    };
    drop(admission);
    let decision = inference
        .decide(&app.policy())
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    let inference_ms = millis(t);

    let mut warnings = Vec::new();
    let t = Instant::now();
    let detector = app.detector.clone();
    let detected = {
        let image = image.clone();
        tokio::task::spawn_blocking(move || detector.detect(&image)).await?
    };
    let boxes = match detected {
        Ok(raw) => postprocess(&raw, app.config.score_threshold, app.config.max_boxes),
        Err(e) => {
            tracing::warn!(error = %e, "detector failed");
            warnings.push(format!("feature detection skipped: {e}"));
            Vec::new()
        }
    };
    let detection_ms = millis(t);

    let t = Instant::now();
    let references = if snap.index.is_empty() {
        warnings.push("reference index is empty".into());
        Vec::new()
    } else {
        let catalog = snap.store.snapshot();
        let top_period = (app.config.filter_by_period && decision.outcome == Outcome::Dated)
            .then(|| decision.ranked[0].period);
        let accept = |id: &str| match top_period {
            Some(p) => catalog.get_artifact(id).is_ok_and(|r| r.period == p),
            None => true,
        };
        match snap.index.query_filtered(&inference.output.embedding, app.config.reference_k, accept) {
            Ok(hits) => hits
                .into_iter()
                .map(|h| Reference {
                    image_url: image_url(&h.artifact_id),
                    artifact_id: h.artifact_id,
                    similarity: h.similarity,
                })
                .collect(),
            Err(e) => {
                warnings.push(format!("reference retrieval skipped: {e}"));
                Vec::new()
            }
        }
    };
    let retrieval_ms = millis(t);

    Ok(Json(DatingResponse {
        decision,
        boxes,
        references,
        model_descriptor: model.descriptor(),
        warnings,
        timing_ms: Timing {
            decode: decode_ms,
            inference: inference_ms,
            detection: detection_ms,
            retrieval: retrieval_ms,
            total: millis(started),
        },
    }))
}

#[derive(Serialize)]
struct ArtifactDocument {
    #[serde(flatten)]
    record: ArtifactRecord,
    image_url: String,
}

fn lookup(app: &AppState, id: &str) -> Result<ArtifactRecord, ApiError> {
    app.snapshot().store.get_artifact(id).map_err(|e| match e {
        CatalogError::NotFound(_) => ApiError::NotFound(format!("artifact {id:?}")),
        other => ApiError::Internal(other.to_string()),
    })
}

async fn artifact(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let record = lookup(&app, &id)?;
    Ok(Json(ArtifactDocument {
        image_url: image_url(&record.id),
        record,
    })
    .into_response())
}

async fn artifact_image(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let record = lookup(&app, &id)?;
    let store = app.snapshot().store.clone();
    let bytes = tokio::task::spawn_blocking(move || store.image_bytes(&record.image_ref))
        .await?
        .map_err(|e| match e {
            CatalogError::NotFound(r) => ApiError::NotFound(format!("image {r}")),
            other => ApiError::Internal(other.to_string()),
        })?;
    let format = sniff_format(&bytes).ok_or_else(|| ApiError::Internal(format!("stored blob for {id} is not an image")))?;
    Ok(([(header::CONTENT_TYPE, format.content_type())], bytes).into_response())
}

pub async fn health(app: &AppState) -> Health {
    let snap = app.snapshot();
    Health {
        status: "ok",
        model_loaded: snap.model.is_some(),
        model_descriptor: snap.model.as_ref().map(|m| m.descriptor()),
        catalog_size: snap.store.snapshot().len(),
        index_size: snap.index.len(),
        detector_ok: app.detector_ok().await,
    }
}

async fn healthz(State(app): State<Arc<AppState>>) -> Json<Health> {
    Json(health(&app).await)
}

async fn reload(State(app): State<Arc<AppState>>) -> Result<Json<Health>, ApiError> {
    let worker = app.clone();
    tokio::task::spawn_blocking(move || worker.reload())
        .await?
        .map_err(|e| ApiError::Internal(format!("reload failed, previous state kept: {e}")))?;
    Ok(Json(health(&app).await))
}

pub fn router(app: Arc<AppState>) -> Router {
    let limit = app.config.max_upload_bytes + MULTIPART_OVERHEAD;
    Router::new()
        .route("/api/v1/date", post(date))
        .route("/api/v1/artifacts/{id}", get(artifact))
        .route("/api/v1/artifacts/{id}/image", get(artifact_image))
        .route("/healthz", get(healthz))
        .route("/admin/reload", post(reload))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(app)
}
