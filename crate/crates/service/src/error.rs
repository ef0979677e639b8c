use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use cogcubes_core::formats::FormatError;
use cogcubes_core::TaskError;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("no session with id {0}")]
    UnknownSession(String),
    #[error("task library unavailable: {0}")]
    InvalidLibrary(String),
    #[error("malformed request: {0}")]
    BadRequest(String),
    #[error("assessor token missing or wrong")]
    Unauthorized,
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("storage failure: {0}")]
    Storage(#[from] FormatError),
}

impl ServiceError {
    /// Machine-readable name sent to clients.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownSession(_) => "UnknownSession",
            ServiceError::InvalidLibrary(_) => "InvalidLibrary",
            ServiceError::BadRequest(_) => "BadRequest",
            ServiceError::Unauthorized => "Unauthorized",
            ServiceError::Task(e) => e.code(),
            ServiceError::Storage(_) => "Storage",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::InvalidLibrary(_) | ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Unauthorized => StatusCode::UNAUTHORIZED,
            ServiceError::Task(TaskError::WrongPhase(_) | TaskError::NoActiveTask) => StatusCode::CONFLICT,
            ServiceError::Task(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.code(), "message": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}
