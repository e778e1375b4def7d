use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use copilot_core::corpus::CorpusError;
use copilot_core::engine::EngineError;
use copilot_core::llm::{LlmError, PromptError};
use copilot_core::retrieval::RetrievalError;
use copilot_core::services::ServiceError;
use serde::{Deserialize, Serialize};

/// Error body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub retriable: bool,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>, retriable: bool) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.to_string(),
                message: message.into(),
                retriable,
            },
        }
    }

    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message, false)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", message, false)
    }
}

fn classify_corpus(e: &CorpusError) -> (StatusCode, &'static str) {
    match e {
        CorpusError::EmptyName => (StatusCode::BAD_REQUEST, "EMPTY_NAME"),
        CorpusError::Feed(_) => (StatusCode::BAD_GATEWAY, "FEED_UNAVAILABLE"),
        CorpusError::StaleDate { .. } => (StatusCode::CONFLICT, "STALE_DATE"),
        CorpusError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "STORAGE"),
    }
}

fn classify_engine(e: &EngineError) -> (StatusCode, &'static str) {
    match e {
        EngineError::Overloaded => (StatusCode::SERVICE_UNAVAILABLE, "OVERLOADED"),
        EngineError::QueueFull(_) => (StatusCode::SERVICE_UNAVAILABLE, "QUEUE_FULL"),
        EngineError::Stopped => (StatusCode::SERVICE_UNAVAILABLE, "STOPPED"),
        EngineError::Corpus(c) => classify_corpus(c),
        EngineError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "STORAGE"),
        EngineError::Embed(_) | EngineError::Pool(_) | EngineError::Thought(_) => {
            (StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL")
        }
    }
}

/// Status and code for a service error. Total over every variant.
pub fn classify(err: &ServiceError) -> (StatusCode, &'static str) {
    match err {
        ServiceError::EmptyName => (StatusCode::BAD_REQUEST, "EMPTY_NAME"),
        ServiceError::EmptyText(_) => (StatusCode::BAD_REQUEST, "EMPTY_TEXT"),
        ServiceError::InvalidEmail => (StatusCode::BAD_REQUEST, "INVALID_EMAIL"),
        ServiceError::InvalidMinutes => (StatusCode::BAD_REQUEST, "INVALID_MINUTES"),
        ServiceError::NoProfile(_) => (StatusCode::CONFLICT, "NO_PROFILE"),
        ServiceError::NotSignedUp(_) => (StatusCode::CONFLICT, "NOT_SIGNED_UP"),
        ServiceError::ExchangeNotFound(_) => (StatusCode::NOT_FOUND, "EXCHANGE_NOT_FOUND"),
        ServiceError::FeedbackAlreadyGiven(_) => (StatusCode::CONFLICT, "FEEDBACK_ALREADY_GIVEN"),
        ServiceError::Llm(LlmError::Prompt(PromptError::OverBudget { .. })) => {
            (StatusCode::PAYLOAD_TOO_LARGE, "PROMPT_TOO_LARGE")
        }
        ServiceError::Llm(LlmError::Prompt(_)) => (StatusCode::UNPROCESSABLE_ENTITY, "PROMPT_INVALID"),
        ServiceError::Llm(_) => (StatusCode::BAD_GATEWAY, "PROVIDER_ERROR"),
        ServiceError::Corpus(e) => classify_corpus(e),
        ServiceError::Retrieval(RetrievalError::EmptyQuery) => (StatusCode::BAD_REQUEST, "EMPTY_TEXT"),
        ServiceError::Retrieval(_) => (StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL"),
        ServiceError::Engine(e) => classify_engine(e),
        ServiceError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "STORAGE"),
        ServiceError::Encoding(_) => (StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL"),
    }
}

impl From<ServiceError> for ApiError {
    fn from(err: ServiceError) -> Self {
        let (status, code) = classify(&err);
        let retriable = err.is_retriable() || status == StatusCode::SERVICE_UNAVAILABLE;
        if status.is_server_error() {
            tracing::warn!(%err, code, "request failed");
        }
        Self::new(status, code, err.to_string(), retriable)
    }
}

impl From<EngineError> for ApiError {
    fn from(err: EngineError) -> Self {
        ServiceError::Engine(err).into()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(r.status(), "BAD_REQUEST", r.body_text(), false)
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        Self::bad_request("BAD_REQUEST", r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
