use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ServiceError {
    #[error("unknown bundle `{0}`")]
    UnknownBundle(String),
    #[error("{0}")]
    BadConfig(String),
    #[error("session {0} is closed")]
    SessionClosed(String),
    #[error("no session {0}")]
    UnknownSession(String),
    #[error("{0}")]
    IllegalIntent(String),
    #[error("classified as {intent} with confidence {confidence:.3}; send a structured turn")]
    LowConfidence { intent: String, confidence: f64 },
    #[error("a turn for this session is still being processed")]
    TurnInProgress,
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Internal(String),
}

/// Wire form of an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownBundle(_) => "UnknownBundle",
            ServiceError::BadConfig(_) => "BadConfig",
            ServiceError::SessionClosed(_) => "SessionClosed",
            ServiceError::UnknownSession(_) => "UnknownSession",
            ServiceError::IllegalIntent(_) => "IllegalIntent",
            ServiceError::LowConfidence { .. } => "LowConfidence",
            ServiceError::TurnInProgress => "TurnInProgress",
            ServiceError::BadRequest(_) => "BadRequest",
            ServiceError::Internal(_) => "Internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownBundle(_) | ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::BadConfig(_) | ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::SessionClosed(_) | ServiceError::TurnInProgress => StatusCode::CONFLICT,
            ServiceError::IllegalIntent(_) | ServiceError::LowConfidence { .. } => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            error: self.code().into(),
            detail: self.to_string(),
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.body())).into_response()
    }
}
