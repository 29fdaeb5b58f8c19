//! HTTP/JSON routes over a shared [`Platform`].
//!
//! Ingest speaks the text batch/ack wire format; everything else is JSON.
//! Errors come back as `{"error": "..."}` with a status code chosen from
//! the failure kind.

use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use nudgeforge_core::data_model::{day_of, SubjectId};
use nudgeforge_core::experiment::{ControlAction, ExperimentStatus};
use nudgeforge_core::orchestrator::{ExperimentRun, InterventionPlan, OrchestratorError, TickReport};
use nudgeforge_core::platform::{CohortDefinition, IngestError, Platform, PlatformError, PlatformLink};
use nudgeforge_core::sdk::Batch;

use crate::now_ms;

const MAX_BODY_BYTES: usize = 32 * 1024 * 1024;

/// The platform plus the last day the clock has ticked.
#[derive(Debug)]
pub struct Backend {
    pub platform: Platform,
    pub last_tick: Option<i64>,
}

impl Backend {
    pub fn new(platform: Platform) -> Self {
        let last_tick = platform
            .orchestrator()
            .runs()
            .filter_map(|r| r.ticks().last().map(|t| t.day))
            .max();
        Backend { platform, last_tick }
    }

    /// Attributes rewards and ticks every active experiment for `day`.
    /// Each day is attempted at most once, even if it fails part way.
    pub fn advance(&mut self, day: i64) -> Result<Vec<TickReport>, ApiError> {
        if let Some(last) = self.last_tick {
            if day <= last {
                return Err(ApiError::new(StatusCode::CONFLICT, format!("day {day} already ticked (last {last})")));
            }
        }
        self.last_tick = Some(day);
        self.platform.attribute_rewards(day)?;
        Ok(self.platform.tick(day)?)
    }
}

#[derive(Clone)]
pub struct AppState {
    pub backend: Arc<RwLock<Backend>>,
    pub api_token: Option<Arc<str>>,
}

impl AppState {
    pub fn new(platform: Platform, api_token: Option<String>) -> Self {
        AppState {
            backend: Arc::new(RwLock::new(Backend::new(platform))),
            api_token: api_token.map(Arc::from),
        }
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Backend> {
        self.backend.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, Backend> {
        self.backend.write().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<PlatformError> for ApiError {
    fn from(e: PlatformError) -> Self {
        let status = match &e {
            PlatformError::UnknownSubject(_) => StatusCode::NOT_FOUND,
            PlatformError::Orchestrator(o) => match o {
                OrchestratorError::UnknownExperiment(_) => StatusCode::NOT_FOUND,
                OrchestratorError::DuplicateExperiment(_) | OrchestratorError::IllegalTransition(_) => StatusCode::CONFLICT,
                OrchestratorError::ExperimentNotRunning(_) | OrchestratorError::OutsideWindow { .. } => StatusCode::CONFLICT,
                _ => StatusCode::BAD_REQUEST,
            },
            PlatformError::Ingest(IngestError::Storage(_)) | PlatformError::Store(_) | PlatformError::Open(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
            PlatformError::Ingest(_) | PlatformError::Trait(_) | PlatformError::Cohort(_) => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

async fn require_token(State(state): State<AppState>, headers: HeaderMap, req: Request, next: Next) -> Response {
    if let Some(token) = &state.api_token {
        let presented = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_ref()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "missing or wrong bearer token").into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/ingest", post(ingest))
        .route("/v1/subjects/{id}/traits", get(subject_traits))
        .route("/v1/cohorts/evaluate", post(evaluate_cohort))
        .route("/v1/experiments", get(list_experiments).post(create_experiment))
        .route("/v1/experiments/{id}", get(get_experiment))
        .route("/v1/experiments/{id}/monitor", get(monitor))
        .route("/v1/experiments/{id}/ticks", get(ticks))
        .route("/v1/experiments/{id}/{action}", post(control))
        .route("/v1/devices/{id}/nudges", get(poll_nudges))
        .route("/v1/admin/tick", post(admin_tick))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

async fn ingest(State(state): State<AppState>, body: String) -> ApiResult<Response> {
    let batch = Batch::parse(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let ack = state.write().platform.ingest(&batch)?;
    let mut line = ack.to_line();
    line.push('\n');
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], line).into_response())
}

#[derive(Deserialize)]
struct AsOfQuery {
    as_of: Option<i64>,
}

async fn subject_traits(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<AsOfQuery>,
) -> ApiResult<Json<Value>> {
    let subject = SubjectId::new(id).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let as_of = q.as_of.unwrap_or_else(now_ms);
    let traits = state.read().platform.subject_traits(&subject, as_of)?;
    Ok(Json(json!({ "subject_id": subject, "as_of_ms": as_of, "traits": traits })))
}

#[derive(Deserialize)]
struct CohortRequest {
    cohort: CohortDefinition,
    as_of_ms: Option<i64>,
}

async fn evaluate_cohort(State(state): State<AppState>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: CohortRequest = parse_json(&body)?;
    let as_of = req.as_of_ms.unwrap_or_else(now_ms);
    let members = state.read().platform.evaluate_cohort(&req.cohort, as_of)?;
    Ok(Json(json!({ "as_of_ms": as_of, "count": members.len(), "subjects": members })))
}

#[derive(Serialize)]
struct ExperimentSummary<'a> {
    experiment_id: &'a str,
    status: ExperimentStatus,
    start_day: i64,
    end_day: i64,
    ticks: usize,
}

fn summary(run: &ExperimentRun) -> ExperimentSummary<'_> {
    let exp = &run.plan.experiment;
    ExperimentSummary {
        experiment_id: &exp.experiment_id,
        status: exp.status,
        start_day: exp.start_day,
        end_day: exp.end_day,
        ticks: run.ticks().len(),
    }
}

fn detail(run: &ExperimentRun) -> Value {
    json!({
        "plan": run.plan,
        "status": run.status(),
        "ticks": run.ticks().len(),
        "nudges": run.nudges().count(),
        "rewards": run.rewards().len(),
        "assignment": run.assignment(),
        "policy_state": run.policy_state_text(),
    })
}

async fn list_experiments(State(state): State<AppState>) -> Json<Value> {
    let backend = state.read();
    let list: Vec<ExperimentSummary> = backend.platform.orchestrator().runs().map(summary).collect();
    Json(json!(list))
}

async fn create_experiment(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let plan: InterventionPlan = parse_json(&body)?;
    let mut backend = state.write();
    let run = backend.platform.create_experiment(plan)?;
    Ok((StatusCode::CREATED, Json(detail(run))))
}

async fn get_experiment(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let backend = state.read();
    Ok(Json(detail(backend.platform.experiment(&id)?)))
}

async fn control(State(state): State<AppState>, Path((id, action)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    let action: ControlAction = match action.as_str() {
        "start" | "pause" | "resume" | "stop" => action.parse().map_err(ApiError::bad_request)?,
        other => return Err(ApiError::new(StatusCode::NOT_FOUND, format!("no action `{other}`"))),
    };
    let status = state.write().platform.control(&id, action)?;
    Ok(Json(json!({ "experiment_id": id, "status": status })))
}

#[derive(Deserialize)]
struct MonitorQuery {
    from_day: Option<i64>,
    to_day: Option<i64>,
}

async fn monitor(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<MonitorQuery>,
) -> ApiResult<Json<Value>> {
    let backend = state.read();
    let run = backend.platform.experiment(&id)?;
    let exp = &run.plan.experiment;
    let last = run.ticks().last().map_or(0, |t| t.day - exp.start_day);
    let from = q.from_day.unwrap_or(0);
    let to = q.to_day.unwrap_or(last.max(from));
    if from > to {
        return Err(ApiError::bad_request(format!("from_day {from} is after to_day {to}")));
    }
    if to - from > exp.end_day - exp.start_day {
        return Err(ApiError::bad_request("day range is longer than the experiment window"));
    }
    let payload = backend.platform.monitor(&id, from, to)?;
    Ok(Json(json!(payload)))
}

async fn ticks(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let backend = state.read();
    Ok(Json(json!(backend.platform.experiment(&id)?.ticks())))
}

async fn poll_nudges(State(state): State<AppState>, Path(id): Path<String>) -> Json<Value> {
    Json(json!(state.write().platform.poll_nudges(&id)))
}

#[derive(Deserialize)]
struct TickQuery {
    day: Option<i64>,
}

/// Runs the next day (or `day`) by hand.
async fn admin_tick(State(state): State<AppState>, Query(q): Query<TickQuery>) -> ApiResult<Json<Value>> {
    let mut backend = state.write();
    let day = match (q.day, backend.last_tick) {
        (Some(d), _) => d,
        (None, Some(last)) => last + 1,
        (None, None) => day_of(now_ms()),
    };
    let reports = backend.advance(day)?;
    Ok(Json(json!({ "day": day, "reports": reports })))
}
