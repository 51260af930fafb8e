use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

/// JSON error body: `{code, message, field?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub field: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code: code.to_owned(),
                message: message.into(),
                field: None,
            },
        }
    }

    pub fn with_field(mut self, field: impl Into<String>) -> Self {
        self.body.field = Some(field.into());
        self
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} `{id}` does not exist"))
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<activemix::Error> for ApiError {
    fn from(e: activemix::Error) -> Self {
        use activemix::Error as E;
        let message = e.to_string();
        let unprocessable = |code: &str| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, code, message.clone());
        match e {
            E::Invalid { field, .. } => unprocessable("invalid").with_field(field),
            E::LabelRejected { doc_id, .. } => unprocessable("label_rejected").with_field(format!("labels.{doc_id}")),
            E::UnknownDocument(_) => unprocessable("unknown_document").with_field("labels"),
            E::UnknownTerm(_) => unprocessable("unknown_term").with_field("decisions"),
            E::KeywordConflict(_) => unprocessable("keyword_conflict").with_field("decisions"),
            E::MissingClass { .. } => unprocessable("missing_class"),
            E::Parse { .. } | E::Json(_) | E::Csv(_) | E::Toml(_) => ApiError::new(StatusCode::BAD_REQUEST, "parse_error", message),
            E::Stopped | E::WrongPhase { .. } => ApiError::conflict(message),
            _ => ApiError::internal(message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
