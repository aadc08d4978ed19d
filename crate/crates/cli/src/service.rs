//! HTTP surface of a human-annotation run.
//!
//! | route | method | body |
//! |---|---|---|
//! | `/api/queries` | GET | open queries, each with `class_names` |
//! | `/api/labels` | POST | a [`LabelSubmission`] |
//! | `/api/progress` | GET | [`ProgressView`] |
//!
//! GETs never change state. Posts go through [`HumanQueue::post`], which
//! serializes commits.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Request, State};
use axum::http::{HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use poolal::annotate::{HumanQueue, LabelSubmission, PostOutcome, QueryEntry};
use poolal::experiment::{Progress, ProgressHandle};
use poolal::Error;
use serde::Serialize;
use serde_json::json;

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
pub const SECRET_HEADER: &str = "x-annotation-secret";

#[derive(Clone)]
pub struct ServiceState {
    pub queue: HumanQueue,
    pub progress: ProgressHandle,
    pub class_names: Arc<Vec<String>>,
    pub secret: Option<Arc<str>>,
}

#[derive(Debug, Serialize)]
pub struct QueryView {
    #[serde(flatten)]
    pub entry: QueryEntry,
    pub class_names: Arc<Vec<String>>,
}

#[derive(Debug, Serialize)]
pub struct ProgressView {
    #[serde(flatten)]
    pub progress: Progress,
    pub class_count: usize,
    pub class_names: Arc<Vec<String>>,
}

pub fn router(state: ServiceState) -> Router {
    Router::new()
        .route("/api/queries", get(queries))
        .route("/api/labels", post(labels))
        .route("/api/progress", get(progress))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_secret))
        .with_state(state)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn require_secret(State(state): State<ServiceState>, req: Request, next: Next) -> Response {
    if let Some(secret) = &state.secret {
        let given = req.headers().get(SECRET_HEADER).and_then(|v| v.to_str().ok());
        if given != Some(secret.as_ref()) {
            return error(StatusCode::UNAUTHORIZED, "missing or wrong annotation secret");
        }
    }
    next.run(req).await
}

async fn queries(State(state): State<ServiceState>) -> Json<Vec<QueryView>> {
    Json(
        state
            .queue
            .open_queries()
            .into_iter()
            .map(|entry| QueryView { entry, class_names: state.class_names.clone() })
            .collect(),
    )
}

async fn labels(
    State(state): State<ServiceState>,
    headers: HeaderMap,
    body: Result<Json<LabelSubmission>, JsonRejection>,
) -> Response {
    let mut sub = match body {
        Ok(Json(sub)) => sub,
        Err(rejection) => return error(StatusCode::BAD_REQUEST, rejection.body_text()),
    };
    if let Some(key) = headers.get(IDEMPOTENCY_HEADER) {
        match key.to_str() {
            Ok(k) => sub.idempotency_key = Some(k.to_string()),
            Err(_) => return error(StatusCode::BAD_REQUEST, "idempotency key is not valid text"),
        }
    }
    let id = sub.sample_id;
    match state.queue.post(sub) {
        Ok(PostOutcome::Accepted) => {
            (StatusCode::OK, Json(json!({ "sample_id": id, "status": "accepted" }))).into_response()
        }
        Ok(PostOutcome::Replayed) => {
            (StatusCode::OK, Json(json!({ "sample_id": id, "status": "replayed" }))).into_response()
        }
        Err(e @ Error::AlreadyLabeled(_)) => error(StatusCode::CONFLICT, e.to_string()),
        Err(e @ Error::NotPending(_)) => error(StatusCode::NOT_FOUND, e.to_string()),
        Err(e) => error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    }
}

async fn progress(State(state): State<ServiceState>) -> Json<ProgressView> {
    let progress = state.progress.read().unwrap_or_else(|e| e.into_inner()).clone();
    Json(ProgressView { progress, class_count: state.class_names.len(), class_names: state.class_names.clone() })
}
