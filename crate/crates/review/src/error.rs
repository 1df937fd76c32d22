use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use til_core::TilError;

pub type Result<T, E = ReviewError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("not found: {0}")]
    NotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("bad request: {0}")]
    BadRequest(String),

    #[error("thumbnails unavailable: {0}")]
    ThumbnailsUnavailable(String),

    #[error("injected fault: {0}")]
    Injected(&'static str),

    #[error(transparent)]
    Core(#[from] TilError),
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

impl ReviewError {
    pub fn code(&self) -> &'static str {
        match self {
            ReviewError::NotFound(_) => "not_found",
            ReviewError::Conflict(_) => "conflict",
            ReviewError::BadRequest(_) => "bad_request",
            ReviewError::ThumbnailsUnavailable(_) => "thumbnails_unavailable",
            ReviewError::Injected(_) => "injected_fault",
            ReviewError::Core(e) => e.code(),
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ReviewError::NotFound(_) => StatusCode::NOT_FOUND,
            ReviewError::Conflict(_) => StatusCode::CONFLICT,
            ReviewError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ReviewError::ThumbnailsUnavailable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ReviewError::Injected(_) => StatusCode::INTERNAL_SERVER_ERROR,
            ReviewError::Core(e) => match e {
                TilError::OutOfUnitRange { .. }
                | TilError::InvalidArgument(_)
                | TilError::UnknownStrategy { .. }
                | TilError::EmptyMap
                | TilError::MissingMetadata(_) => StatusCode::BAD_REQUEST,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            },
        }
    }
}

impl IntoResponse for ReviewError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code(),
            message: self.to_string(),
        };
        (self.status(), Json(body)).into_response()
    }
}
