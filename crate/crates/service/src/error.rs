use std::fmt::Display;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use nlctd_core::embedding::EmbedError;
use nlctd_core::engine::EngineError;
use nlctd_core::table::TableError;
use serde_json::json;

use crate::process::ProcessError;

/// An HTTP error with a stable machine-readable code.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Display) -> Self {
        ApiError {
            status,
            code,
            message: message.to_string(),
        }
    }

    pub fn bad_request(code: &'static str, message: impl Display) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn not_found(code: &'static str, message: impl Display) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    pub fn conflict(code: &'static str, message: impl Display) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    pub fn internal(message: impl Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

impl From<TableError> for ApiError {
    fn from(e: TableError) -> Self {
        match e {
            TableError::Io(_) => ApiError::new(StatusCode::NOT_FOUND, "not_found", e),
            TableError::EmptyPool(_) => ApiError::not_found("empty_pool", e),
            TableError::DuplicateId(_) => ApiError::conflict("duplicate_table", e),
            _ => ApiError::bad_request("invalid_input", e),
        }
    }
}

impl From<EmbedError> for ApiError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::ProviderUnavailable(_) => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "provider_unavailable", e),
            EmbedError::InvalidConfig(_) => ApiError::bad_request("invalid_config", e),
            _ => ApiError::internal(e),
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::IndexNotReady => ApiError::conflict("index_not_ready", "the pool has no index yet; POST /pools/{id}/index first"),
            EngineError::UnknownTable(_) => ApiError::not_found("unknown_table", e),
            EngineError::InvalidConfig(_) => ApiError::bad_request("invalid_query", e),
            EngineError::Query(t) => t.into(),
            EngineError::Embed(t) => t.into(),
            _ => ApiError::internal(e),
        }
    }
}

impl From<ProcessError> for ApiError {
    fn from(e: ProcessError) -> Self {
        match e {
            ProcessError::Embed(t) => t.into(),
            ProcessError::Score(_) => ApiError::internal(e),
            _ => ApiError::bad_request("invalid_process", e),
        }
    }
}
