//! HTTP routes.
//!
//! | method | path                      | body                                   |
//! |--------|---------------------------|----------------------------------------|
//! | POST   | `/sessions`               | `{"study_id", "user_id"}`              |
//! | GET    | `/sessions/{id}`          |                                        |
//! | GET    | `/sessions/{id}/next`     |                                        |
//! | POST   | `/sessions/{id}/responses`| `{"trial_index", "accepted", "elapsed_ms"}` |
//! | GET    | `/studies/{id}/results`   | `?format=csv` for the raw trial log    |
//! | GET    | `/assets/{image_id}`      |                                        |

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use crate::error::ServiceError;
use crate::service::StudyService;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Storage(_) | ServiceError::Core(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

type Shared = Arc<StudyService>;
type ApiResult<T> = std::result::Result<T, ServiceError>;

#[derive(Deserialize)]
struct CreateSession {
    study_id: String,
    user_id: String,
}

#[derive(Deserialize)]
struct SubmitResponse {
    trial_index: usize,
    accepted: bool,
    #[serde(default)]
    elapsed_ms: u64,
}

#[derive(Deserialize)]
struct ResultsQuery {
    format: Option<String>,
}

async fn create_session(State(svc): State<Shared>, Json(req): Json<CreateSession>) -> ApiResult<Response> {
    Ok(Json(svc.create_session(&req.study_id, &req.user_id)?).into_response())
}

async fn get_session(State(svc): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(svc.session(&id)?).into_response())
}

async fn next_trial(State(svc): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(svc.next_trial(&id)?).into_response())
}

async fn submit(State(svc): State<Shared>, Path(id): Path<String>, Json(req): Json<SubmitResponse>) -> ApiResult<Response> {
    Ok(Json(svc.submit_response(&id, req.trial_index, req.accepted, req.elapsed_ms)?).into_response())
}

async fn results(State(svc): State<Shared>, Path(id): Path<String>, Query(q): Query<ResultsQuery>) -> ApiResult<Response> {
    let r = svc.session_results(&id);
    match q.format.as_deref() {
        None | Some("json") => Ok(Json(r).into_response()),
        Some("csv") => Ok(([(header::CONTENT_TYPE, "text/csv")], r.log.to_csv()?).into_response()),
        Some(other) => Err(ServiceError::BadRequest(format!("unknown format {other:?}"))),
    }
}

async fn asset(State(svc): State<Shared>, Path(image_id): Path<String>) -> ApiResult<Response> {
    let path = svc
        .asset_path(&image_id)
        .ok_or_else(|| ServiceError::NotFound(format!("asset {image_id}")))?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| ServiceError::NotFound(format!("asset {image_id}")))?;
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/next", get(next_trial))
        .route("/sessions/{id}/responses", post(submit))
        .route("/studies/{id}/results", get(results))
        .route("/assets/{image_id}", get(asset))
        .with_state(service)
}

pub async fn serve(service: Shared, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(service)).await
}
