//! `/v1` JSON service over the shared operations.

use crate::error::{parse_json, WorkbenchError};
use crate::ops;
use crate::store::RunStore;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use shiftbench_core::model::{ModelConfig, ShiftModel};
use shiftbench_sim::ScenarioId;
use std::sync::Arc;

impl IntoResponse for WorkbenchError {
    fn into_response(self) -> Response {
        let (status, body) = match &self {
            WorkbenchError::BadRequest { pointer, message } => (StatusCode::BAD_REQUEST, json!({"error": message, "pointer": pointer})),
            WorkbenchError::NotFound(m) => (StatusCode::NOT_FOUND, json!({"error": m})),
            WorkbenchError::Conflict(m) => (StatusCode::CONFLICT, json!({"error": m})),
            WorkbenchError::Io(m) => (StatusCode::INTERNAL_SERVER_ERROR, json!({"error": m})),
        };
        (status, Json(body)).into_response()
    }
}

type AppState = Arc<RunStore>;

pub fn router(store: RunStore) -> Router {
    Router::new()
        .route("/v1/models", post(register_model).get(list_models))
        .route("/v1/estimate", post(estimate))
        .route("/v1/worst-case", post(worst_case))
        .route("/v1/sweep", post(sweep))
        .route("/v1/runs", get(list_runs))
        .route("/v1/runs/{id}", get(get_run))
        .with_state(Arc::new(store))
}

/// Runs a blocking operation off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, WorkbenchError> + Send + 'static) -> Result<T, WorkbenchError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| WorkbenchError::Io(e.to_string()))?
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelRegistration {
    #[serde(default)]
    id: Option<String>,
    model: ModelConfig,
}

async fn register_model(State(store): State<AppState>, body: String) -> Result<Response, WorkbenchError> {
    let reg: ModelRegistration = parse_json(&body)?;
    ShiftModel::new(reg.model.clone()).map_err(|e| WorkbenchError::from(e).under("/model"))?;
    let (id, new) = blocking(move || store.register_model(reg.id, &reg.model)).await?;
    let status = if new { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(json!({"id": id}))).into_response())
}

async fn list_models(State(store): State<AppState>) -> Result<Json<Value>, WorkbenchError> {
    let registered = blocking(move || store.models()).await?;
    let scenarios: Vec<Value> = ScenarioId::ALL.iter().map(|s| json!({"id": s.as_str(), "description": s.description()})).collect();
    Ok(Json(json!({"models": registered, "scenarios": scenarios})))
}

async fn estimate(State(store): State<AppState>, body: String) -> Result<Json<Value>, WorkbenchError> {
    let req: ops::EstimateRequest = parse_json(&body)?;
    let run = blocking(move || ops::estimate_run(req, Some(&store))).await?;
    Ok(Json(serde_json::to_value(run).map_err(|e| WorkbenchError::Io(e.to_string()))?))
}

async fn worst_case(State(store): State<AppState>, body: String) -> Result<Json<Value>, WorkbenchError> {
    let req: ops::WorstCaseRequest = parse_json(&body)?;
    let run = blocking(move || ops::worst_case_run(req, Some(&store))).await?;
    Ok(Json(serde_json::to_value(run).map_err(|e| WorkbenchError::Io(e.to_string()))?))
}

async fn sweep(State(store): State<AppState>, body: String) -> Result<Json<Value>, WorkbenchError> {
    let req: ops::SweepRequest = parse_json(&body)?;
    let run = blocking(move || ops::sweep_run(req, Some(&store))).await?;
    Ok(Json(serde_json::to_value(run).map_err(|e| WorkbenchError::Io(e.to_string()))?))
}

async fn list_runs(State(store): State<AppState>) -> Result<Json<Value>, WorkbenchError> {
    let runs = blocking(move || store.list()).await?;
    Ok(Json(json!({"runs": runs})))
}

async fn get_run(State(store): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, WorkbenchError> {
    let run = blocking(move || store.get(&id)).await?;
    Ok(Json(serde_json::to_value(run).map_err(|e| WorkbenchError::Io(e.to_string()))?))
}

/// Serves until the process is stopped.
pub async fn serve(store: RunStore, addr: &str) -> Result<(), WorkbenchError> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| WorkbenchError::Io(e.to_string()))?;
    eprintln!("listening on {}", listener.local_addr().map_err(|e| WorkbenchError::Io(e.to_string()))?);
    axum::serve(listener, router(store)).await.map_err(|e| WorkbenchError::Io(e.to_string()))
}
