use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use kgforage::discovery::DiscoveryError;
use kgforage::kg_client::ClientError;
use kgforage::materializer::MaterializeError;
use kgforage::planner::PlanError;
use kgforage::tabular::TabularError;
use serde::Serialize;

/// An error response: `{"error": kind, "message": …, "errors": [PlanError]}`.
#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    #[serde(rename = "error")]
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub errors: Option<Vec<PlanError>>,
    /// Failing request chunk of a batched backend call, 1-based.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chunk: Option<usize>,
}

impl ApiError {
    pub fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            kind,
            message: message.into(),
            errors: None,
            chunk: None,
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }

    pub fn session_not_found(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "SessionNotFound",
            format!("no session {id:?}"),
        )
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<ClientError> for ApiError {
    fn from(e: ClientError) -> Self {
        let message = e.to_string();
        match e {
            ClientError::BackendUnavailable { chunk, .. } => ApiError {
                chunk,
                ..Self::new(StatusCode::BAD_GATEWAY, "BackendUnavailable", message)
            },
            ClientError::QueryRejected { chunk, .. } => ApiError {
                chunk,
                ..Self::new(StatusCode::BAD_GATEWAY, "QueryRejected", message)
            },
            ClientError::EmptyCell => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "EmptyCell", message)
            }
            ClientError::Config(_) => Self::new(StatusCode::BAD_REQUEST, "BackendConfig", message),
        }
    }
}

impl From<TabularError> for ApiError {
    fn from(e: TabularError) -> Self {
        let message = e.to_string();
        match e {
            TabularError::CsvError { .. } | TabularError::RaggedRows { .. } => {
                Self::new(StatusCode::BAD_REQUEST, "CsvError", message)
            }
            TabularError::UnknownColumn(_) => {
                Self::new(StatusCode::NOT_FOUND, "UnknownColumn", message)
            }
            TabularError::LengthMismatch { .. } | TabularError::CellTypeMismatch { .. } => {
                Self::internal(message)
            }
        }
    }
}

impl From<DiscoveryError> for ApiError {
    fn from(e: DiscoveryError) -> Self {
        let message = e.to_string();
        let unprocessable =
            |kind| Self::new(StatusCode::UNPROCESSABLE_ENTITY, kind, message.clone());
        match e {
            DiscoveryError::UnknownColumn(_) => {
                Self::new(StatusCode::NOT_FOUND, "UnknownColumn", message)
            }
            DiscoveryError::NotAStringColumn(_) => unprocessable("NotAStringColumn"),
            DiscoveryError::EmptyDataset => unprocessable("EmptyDataset"),
            DiscoveryError::AllCellsUnresolved => unprocessable("AllCellsUnresolved"),
            DiscoveryError::EmptySample => unprocessable("EmptySample"),
            DiscoveryError::BadCounts { .. } => Self::internal(message),
            DiscoveryError::Config(_) => Self::bad_request(message),
            DiscoveryError::Client(c) => c.into(),
        }
    }
}

impl From<MaterializeError> for ApiError {
    fn from(e: MaterializeError) -> Self {
        let message = e.to_string();
        let unprocessable =
            |kind| Self::new(StatusCode::UNPROCESSABLE_ENTITY, kind, message.clone());
        match e {
            MaterializeError::InvalidPlan(errors) => ApiError {
                errors: Some(errors),
                ..unprocessable("PlanError")
            },
            MaterializeError::Aggregate(_) => unprocessable("AggregateError"),
            MaterializeError::RowUnresolvable { .. } => unprocessable("RowUnresolvable"),
            MaterializeError::RowOutOfRange { .. } => unprocessable("RowOutOfRange"),
            MaterializeError::ShapeMismatch => Self::internal(message),
            MaterializeError::Client(c) => c.into(),
            MaterializeError::Tabular(t) => t.into(),
        }
    }
}
