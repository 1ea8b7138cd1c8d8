use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use serde_json::json;

use crate::auth::AuthError;
use crate::chat::ChatError;
use crate::geo::GeoError;
use crate::notify::NotifyError;
use crate::sos::SosError;

/// Error body `{"error": {"code", "message"}}` with a stable code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    /// The one response every protected route gives without a live session.
    pub fn unauthenticated() -> Self {
        Self::new(
            StatusCode::UNAUTHORIZED,
            "Unauthenticated",
            "missing, invalid or expired session",
        )
    }

    pub fn forbidden() -> Self {
        Self::new(StatusCode::FORBIDDEN, "Forbidden", "admin credential required")
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "InvalidRequest", message)
    }

    pub fn internal() -> Self {
        Self::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "Internal",
            "internal error",
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code, "message": self.message}});
        (self.status, axum::Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

fn store_failure(e: &dyn std::fmt::Display) -> ApiError {
    tracing::error!(error = %e, "store failure");
    ApiError::internal()
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        use AuthError::*;
        let (status, code) = match &e {
            EmailTaken => (StatusCode::CONFLICT, "EmailTaken"),
            WeakPassword => (StatusCode::BAD_REQUEST, "WeakPassword"),
            InvalidEmail => (StatusCode::BAD_REQUEST, "InvalidEmail"),
            InvalidName => (StatusCode::BAD_REQUEST, "InvalidName"),
            UnknownToken => (StatusCode::NOT_FOUND, "UnknownToken"),
            ExpiredToken => (StatusCode::GONE, "ExpiredToken"),
            AlreadyUsed => (StatusCode::CONFLICT, "AlreadyUsed"),
            BadCredentials => (StatusCode::UNAUTHORIZED, "BadCredentials"),
            EmailUnverified => (StatusCode::FORBIDDEN, "EmailUnverified"),
            Unauthenticated => return ApiError::unauthenticated(),
            UnknownUser => (StatusCode::NOT_FOUND, "UnknownUser"),
            InvalidDeviceToken => (StatusCode::BAD_REQUEST, "InvalidDeviceToken"),
            Mail(_) => (StatusCode::BAD_GATEWAY, "Mail"),
            Store(_) => return store_failure(&e),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<SosError> for ApiError {
    fn from(e: SosError) -> Self {
        use SosError::*;
        let (status, code) = match &e {
            TooManyContacts => (StatusCode::BAD_REQUEST, "TooManyContacts"),
            EmptyList => (StatusCode::BAD_REQUEST, "EmptyList"),
            InvalidNumber(_) => (StatusCode::BAD_REQUEST, "InvalidNumber"),
            NoContactsSet => (StatusCode::NOT_FOUND, "NoContactsSet"),
            UnknownUser => (StatusCode::NOT_FOUND, "UnknownUser"),
            Store(_) => return store_failure(&e),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<GeoError> for ApiError {
    fn from(e: GeoError) -> Self {
        use GeoError::*;
        let (status, code) = match &e {
            LatitudeOutOfRange(_) => (StatusCode::BAD_REQUEST, "LatitudeOutOfRange"),
            LongitudeNotFinite(_) => (StatusCode::BAD_REQUEST, "LongitudeNotFinite"),
            Malformed(_) => (StatusCode::BAD_REQUEST, "Malformed"),
            UnknownCategory(_) => (StatusCode::BAD_REQUEST, "UnknownCategory"),
            DuplicateId(_) => (StatusCode::CONFLICT, "DuplicateId"),
            BadCellSize(_) => (StatusCode::BAD_REQUEST, "BadCellSize"),
            InvalidQuery(_) => (StatusCode::BAD_REQUEST, "InvalidQuery"),
            EmptyIndex => (StatusCode::SERVICE_UNAVAILABLE, "EmptyIndex"),
            UnreadableFile(_) => return store_failure(&e),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<ChatError> for ApiError {
    fn from(e: ChatError) -> Self {
        use ChatError::*;
        let (status, code) = match &e {
            EmptyQuery => (StatusCode::BAD_REQUEST, "EmptyQuery"),
            EmptyBody => (StatusCode::BAD_REQUEST, "EmptyBody"),
            BodyTooLong => (StatusCode::PAYLOAD_TOO_LARGE, "BodyTooLong"),
            SelfMessage => (StatusCode::BAD_REQUEST, "SelfMessage"),
            UnknownRecipient => (StatusCode::NOT_FOUND, "UnknownRecipient"),
            UnknownUser => (StatusCode::NOT_FOUND, "UnknownUser"),
            NotParticipant => (StatusCode::FORBIDDEN, "NotParticipant"),
            UnknownCheckpoint(_) => (StatusCode::BAD_REQUEST, "UnknownCheckpoint"),
            Store(_) => return store_failure(&e),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<NotifyError> for ApiError {
    fn from(e: NotifyError) -> Self {
        match &e {
            NotifyError::EmptyBroadcast => {
                ApiError::new(StatusCode::BAD_REQUEST, "EmptyBroadcast", e.to_string())
            }
            NotifyError::Store(_) => store_failure(&e),
        }
    }
}
