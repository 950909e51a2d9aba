//! HTTP/JSON front end for [`powsim::api`].
//!
//! Every operation is a `POST` taking the same request document the CLI
//! reads, and answering with the library's output type. Simulations are CPU
//! bound, so handlers hand them to the blocking pool.

use axum::extract::rejection::JsonRejection;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use powsim::api::{self, ApiError, BenchRequest, SweepRequest, ValidateRequest};
use powsim::config::Config;
use serde::{Deserialize, Serialize};

/// Error classes, matching the CLI's exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Config,
    Io,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: ErrorKind,
    pub message: String,
}

#[derive(Debug)]
pub struct ServiceError(ErrorBody);

impl ServiceError {
    fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        ServiceError(ErrorBody { kind, message: message.into() })
    }
}

impl From<ApiError> for ServiceError {
    fn from(e: ApiError) -> Self {
        match e {
            ApiError::Config(m) => ServiceError::new(ErrorKind::Config, m),
            ApiError::Io(m) => ServiceError::new(ErrorKind::Io, m),
        }
    }
}

impl From<JsonRejection> for ServiceError {
    fn from(e: JsonRejection) -> Self {
        ServiceError::new(ErrorKind::Config, e.body_text())
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match self.0.kind {
            ErrorKind::Config => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::Io => StatusCode::NOT_FOUND,
            ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(self.0)).into_response()
    }
}

type Reply<T> = Result<Json<T>, ServiceError>;

async fn blocking<T, F>(f: F) -> Reply<T>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => Ok(Json(r?)),
        Err(e) => Err(ServiceError::new(ErrorKind::Internal, format!("worker failed: {e}"))),
    }
}

async fn health() -> &'static str {
    "ok"
}

async fn run(body: Result<Json<Config>, JsonRejection>) -> Reply<api::RunOutput> {
    let Json(cfg) = body?;
    // Deserializing skips the cross-field checks `Config::from_json` applies.
    cfg.experiment().map_err(ApiError::from)?;
    blocking(move || api::run(&cfg)).await
}

async fn sweep(body: Result<Json<SweepRequest>, JsonRejection>) -> Reply<api::SweepOutput> {
    let Json(req) = body?;
    blocking(move || api::sweep(&req)).await
}

async fn validate(body: Result<Json<ValidateRequest>, JsonRejection>) -> Reply<api::ValidateOutput> {
    let Json(req) = body?;
    blocking(move || api::validate(&req)).await
}

async fn bench_puzzle(body: Result<Json<BenchRequest>, JsonRejection>) -> Reply<api::BenchOutput> {
    let Json(req) = body?;
    blocking(move || api::bench_puzzle(&req)).await
}

pub fn router() -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/run", post(run))
        .route("/sweep", post(sweep))
        .route("/validate", post(validate))
        .route("/bench-puzzle", post(bench_puzzle))
}

/// Serves until the listener fails or the future is dropped.
pub async fn serve(listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router()).await
}
