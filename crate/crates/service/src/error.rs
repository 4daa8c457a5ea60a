use std::path::{Path, PathBuf};

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("no model is active; install one with POST /api/models")]
    NoActiveModel,
    #[error("storing an image requires consent")]
    ConsentRequired,
    #[error("{0}")]
    BadRequest(String),
    #[error("could not decode image: {0}")]
    Decode(String),
    #[error("invalid model file: {0}")]
    InvalidModel(String),
    #[error("no installed model with id {0}")]
    UnknownModel(String),
    #[error("upload exceeds the {limit}-byte limit")]
    TooLarge { limit: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("storage failure: {0}")]
    Storage(String),
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            Self::NoActiveModel => StatusCode::SERVICE_UNAVAILABLE,
            Self::ConsentRequired | Self::BadRequest(_) | Self::Decode(_) | Self::InvalidModel(_) => {
                StatusCode::BAD_REQUEST
            }
            Self::UnknownModel(_) => StatusCode::NOT_FOUND,
            Self::TooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            Self::Io { .. } | Self::Storage(_) | Self::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<fer_core::Error> for ServiceError {
    fn from(e: fer_core::Error) -> Self {
        match e {
            fer_core::Error::Decode(detail) => Self::Decode(detail),
            fer_core::Error::Format(f) => Self::InvalidModel(f.to_string()),
            fer_core::Error::InvalidArgument(detail) => Self::BadRequest(detail),
            other => Self::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}
