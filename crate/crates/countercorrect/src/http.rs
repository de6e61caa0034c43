//! JSON-over-HTTP endpoints.
//!
//! `POST /generate` and `POST /score` run on the blocking pool so that model
//! work never stalls `GET /health`.

use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

use countercorrect_core::service::{
    CandidateResponse, CounterService, GenerateRequest, GenerateResponse, Health, ScoreRequest,
};
use countercorrect_core::Error;

pub type SharedService = Arc<CounterService>;

pub fn router(service: SharedService) -> Router {
    Router::new()
        .route("/generate", post(generate))
        .route("/score", post(score))
        .route("/health", get(health))
        .with_state(service)
}

pub struct ApiError(Error);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::Invalid(_) | Error::UnknownChar(_) | Error::ContextOverflow { .. } | Error::Distribution(_) => {
                StatusCode::BAD_REQUEST
            }
            Error::Config(_) => StatusCode::BAD_REQUEST,
            Error::Rejected(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::EmptyGeneration { .. } => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> countercorrect_core::Result<T> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(result) => result.map_err(ApiError),
        Err(e) => Err(ApiError(Error::Invalid(format!("worker failed: {e}")))),
    }
}

async fn generate(
    State(svc): State<SharedService>,
    Json(req): Json<GenerateRequest>,
) -> Result<Json<GenerateResponse>, ApiError> {
    blocking(move || svc.generate(&req)).await.map(Json)
}

async fn score(State(svc): State<SharedService>, Json(req): Json<ScoreRequest>) -> Result<Json<CandidateResponse>, ApiError> {
    blocking(move || svc.score(&req)).await.map(Json)
}

async fn health(State(svc): State<SharedService>) -> Json<Health> {
    Json(svc.health())
}

/// Serves until the process is stopped.
pub async fn serve(service: SharedService, bind: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service)).await?;
    Ok(())
}
