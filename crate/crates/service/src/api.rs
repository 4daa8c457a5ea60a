//! HTTP routes.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use fer_core::preprocess::{prepare_input, CropBox};
use fer_core::{ClassificationResult, EmotionLabel};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::error::ServiceError;
use crate::models::{ModelEntry, ModelRegistry};
use crate::store::{content_id, ImageRecord, Prediction, Source, Store};
use crate::ServiceConfig;

#[derive(Clone, Debug)]
pub struct AppState {
    pub store: Arc<Store>,
    pub models: Arc<ModelRegistry>,
}

impl AppState {
    /// Images under `root`, models under `root/models`.
    pub fn open(root: &std::path::Path) -> Result<Self, ServiceError> {
        Ok(Self {
            store: Arc::new(Store::open(root)?),
            models: Arc::new(ModelRegistry::open(&root.join("models"))?),
        })
    }
}

pub fn router(state: AppState, config: &ServiceConfig) -> Router {
    let cors = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    let cors = match config.allowed_origin.as_deref().map(HeaderValue::from_str) {
        Some(Ok(origin)) => cors.allow_origin(AllowOrigin::exact(origin)),
        Some(Err(_)) => {
            log::warn!("ignoring malformed allowed origin; allowing any origin");
            cors.allow_origin(Any)
        }
        None => cors.allow_origin(Any),
    };
    let upload_limit = config.max_upload_bytes;
    Router::new()
        .route(
            "/api/classify",
            post(move |state, multipart| classify(state, multipart, upload_limit))
                .layer(DefaultBodyLimit::max(upload_limit)),
        )
        .route(
            "/api/models",
            get(list_models).post(install_model).layer(DefaultBodyLimit::max(config.max_model_bytes)),
        )
        .route("/api/models/{id}/activate", post(activate_model))
        .route("/api/dataset/export", get(export_dataset))
        .route("/api/health", get(health))
        .layer(cors)
        .with_state(state)
}

/// Optional JSON part accompanying the image.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyOptions {
    #[serde(default)]
    pub crop: Option<CropBox>,
    #[serde(default)]
    pub consent: bool,
    #[serde(default)]
    pub source: Source,
    #[serde(default)]
    pub user_label: Option<EmotionLabel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub top: Vec<Prediction>,
    pub distribution: BTreeMap<EmotionLabel, f32>,
    pub model_id: String,
    pub stored: bool,
    pub record_id: Option<String>,
}

fn multipart_error(e: axum::extract::multipart::MultipartError, limit: usize) -> ServiceError {
    if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
        ServiceError::TooLarge { limit }
    } else {
        ServiceError::BadRequest(format!("malformed multipart body: {}", e.body_text()))
    }
}

async fn classify(
    State(state): State<AppState>,
    multipart: Result<Multipart, axum::extract::multipart::MultipartRejection>,
    limit: usize,
) -> Result<Json<ClassifyResponse>, ServiceError> {
    let mut multipart = multipart.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    let mut image: Option<Bytes> = None;
    let mut options = ClassifyOptions::default();
    while let Some(field) = multipart.next_field().await.map_err(|e| multipart_error(e, limit))? {
        match field.name() {
            Some("image") => image = Some(field.bytes().await.map_err(|e| multipart_error(e, limit))?),
            Some("meta") => {
                let raw = field.bytes().await.map_err(|e| multipart_error(e, limit))?;
                options = serde_json::from_slice(&raw)
                    .map_err(|e| ServiceError::BadRequest(format!("invalid meta part: {e}")))?;
            }
            other => {
                return Err(ServiceError::BadRequest(format!(
                    "unexpected multipart field {:?}; expected \"image\" and optional \"meta\"",
                    other.unwrap_or("")
                )))
            }
        }
    }
    let image = image.ok_or_else(|| ServiceError::BadRequest("missing \"image\" part".into()))?;
    let active = state.models.active().ok_or(ServiceError::NoActiveModel)?;

    tokio::task::spawn_blocking(move || {
        let input = prepare_input(&image, options.crop.as_ref())?;
        let result: ClassificationResult = active.model.predict_topk(&input, 3)?;
        let top: Vec<Prediction> = result
            .ranked
            .iter()
            .map(|&(label, confidence)| Prediction { label, confidence })
            .collect();
        let record_id = if options.consent {
            let record = ImageRecord {
                id: content_id(&image),
                captured_at: Utc::now(),
                source: options.source,
                crop: options.crop,
                predictions: top.clone(),
                consent: true,
                user_label: options.user_label,
                model_id: active.id.clone(),
            };
            Some(state.store.persist(&record, &image)?)
        } else {
            None
        };
        Ok(Json(ClassifyResponse {
            top,
            distribution: EmotionLabel::ALL.into_iter().zip(result.distribution).collect(),
            model_id: active.id.clone(),
            stored: record_id.is_some(),
            record_id,
        }))
    })
    .await
    .map_err(|e| ServiceError::Internal(format!("classification task failed: {e}")))?
}

#[derive(Debug, Deserialize)]
struct InstallQuery {
    name: Option<String>,
}

async fn install_model(
    State(state): State<AppState>,
    Query(query): Query<InstallQuery>,
    body: Result<Bytes, BytesRejection>,
) -> Result<(StatusCode, Json<ModelEntry>), ServiceError> {
    let body = body.map_err(|e| {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ServiceError::BadRequest(format!("model upload too large: {}", e.body_text()))
        } else {
            ServiceError::BadRequest(e.body_text())
        }
    })?;
    let (entry, created) = tokio::task::spawn_blocking(move || state.models.install(&body, query.name.as_deref()))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(entry)))
}

async fn list_models(State(state): State<AppState>) -> Json<Vec<ModelEntry>> {
    Json(state.models.list())
}

async fn activate_model(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<ModelEntry>, ServiceError> {
    tokio::task::spawn_blocking(move || state.models.activate(&id))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
        .map(Json)
}

#[derive(Debug, Default, Deserialize)]
struct ExportQuery {
    #[serde(default)]
    labeled_only: bool,
}

async fn export_dataset(
    State(state): State<AppState>,
    Query(query): Query<ExportQuery>,
) -> Result<Response, ServiceError> {
    let archive = tokio::task::spawn_blocking(move || {
        let mut out = Vec::new();
        state.store.export(query.labeled_only, &mut out).map(|_| out)
    })
    .await
    .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok((
        [
            (header::CONTENT_TYPE, "application/x-tar"),
            (header::CONTENT_DISPOSITION, "attachment; filename=\"dataset.tar\""),
        ],
        Body::from(archive),
    )
        .into_response())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub active_model_id: Option<String>,
    pub stored_image_count: usize,
}

async fn health(State(state): State<AppState>) -> Response {
    let active_model_id = state.models.active().map(|a| a.id.clone());
    let count = tokio::task::spawn_blocking(move || state.store.image_count()).await;
    match count {
        Ok(Ok(stored_image_count)) => Json(Health {
            status: "ok".into(),
            active_model_id,
            stored_image_count,
        })
        .into_response(),
        Ok(Err(e)) => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(serde_json::json!({
                "status": "unavailable",
                "active_model_id": active_model_id,
                "error": e.to_string(),
            })),
        )
            .into_response(),
        Err(e) => ServiceError::Internal(e.to_string()).into_response(),
    }
}
