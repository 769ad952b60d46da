use std::collections::{BTreeMap, HashMap};
use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, JsonRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::RwLock;
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use super::{
    ApiError, DatasetSummary, PutOutcomeBody, QueueStatsView, ResultPosted, SessionCreated,
    WorkerView,
};
use crate::broker::{dead_letter_queue, TASK_QUEUE};
use crate::clock::SharedClock;
use crate::data::{load_csv, DataError};
use crate::datasets::DatasetRepo;
use crate::queue::TaskQueue;
use crate::store::{
    PutOutcome, Reducer, ResultQuery, ResultRecord, ResultsStore, SortKey, StoreError, TaskStatus,
    XField, YField,
};
use crate::sweep::{Orchestrator, SweepError, SweepSpec, DEFAULT_TASK_CAP};
use crate::worker::WorkerStatus;

#[derive(Debug, Clone)]
pub struct ApiConfig {
    pub max_upload_bytes: usize,
    pub task_cap: usize,
    /// A worker is listed offline once its last heartbeat is older than this.
    pub offline_after: chrono::Duration,
    pub static_dir: Option<PathBuf>,
    pub cors: bool,
}

impl Default for ApiConfig {
    fn default() -> Self {
        Self {
            max_upload_bytes: super::DEFAULT_MAX_UPLOAD_BYTES,
            task_cap: DEFAULT_TASK_CAP,
            offline_after: chrono::Duration::seconds(30),
            static_dir: None,
            cors: false,
        }
    }
}

pub struct AppState {
    pub store: Arc<ResultsStore>,
    pub datasets: Arc<DatasetRepo>,
    pub queue: Arc<dyn TaskQueue>,
    pub orchestrator: Orchestrator,
    pub clock: SharedClock,
    pub config: ApiConfig,
    workers: RwLock<BTreeMap<String, WorkerStatus>>,
}

impl AppState {
    pub fn new(
        store: Arc<ResultsStore>,
        datasets: Arc<DatasetRepo>,
        queue: Arc<dyn TaskQueue>,
        clock: SharedClock,
        config: ApiConfig,
    ) -> Arc<Self> {
        let orchestrator =
            Orchestrator::new(store.clone(), datasets.clone(), queue.clone(), config.task_cap);
        Arc::new(Self {
            store,
            datasets,
            queue,
            orchestrator,
            clock,
            config,
            workers: RwLock::new(BTreeMap::new()),
        })
    }

    pub fn workers(&self) -> Vec<WorkerView> {
        let now = self.clock.now();
        self.workers
            .read()
            .values()
            .map(|s| WorkerView {
                online: now - s.last_heartbeat <= self.config.offline_after,
                status: s.clone(),
            })
            .collect()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status =
            StatusCode::from_u16(self.http_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<DataError> for ApiError {
    fn from(e: DataError) -> Self {
        let message = e.to_string();
        match e {
            DataError::UnknownLabel(col) => {
                ApiError::new(400, "unknown_label", message).with_detail(col)
            }
            DataError::Format { row, column, .. } => {
                let err = ApiError::new(400, "bad_csv", message);
                match (row, column) {
                    (Some(r), _) => err.with_detail(r),
                    (None, Some(c)) => err.with_detail(c),
                    _ => err,
                }
            }
            DataError::InvalidRow { row, .. } => ApiError::new(400, "bad_csv", message).with_detail(row),
            DataError::DegenerateLabel { column } => {
                ApiError::new(400, "bad_csv", message).with_detail(column)
            }
            DataError::TooFewRows { .. } | DataError::TooFewColumns(_) => {
                ApiError::new(400, "bad_csv", message)
            }
        }
    }
}

impl From<SweepError> for ApiError {
    fn from(e: SweepError) -> Self {
        let message = e.to_string();
        match e {
            SweepError::Validation { field, .. } => ApiError::validation(field, message),
            SweepError::TooManyTasks { .. } => ApiError::new(422, "too_many_tasks", message),
            SweepError::NotFound { .. } => ApiError::new(404, "not_found", message),
            SweepError::Unavailable(_) => ApiError::unavailable(message),
            SweepError::Store(e) => e.into(),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        match e {
            StoreError::Validation { field, .. } => ApiError::validation(field, message),
            StoreError::DuplicateSession(_) => ApiError::validation("session_id", message),
            StoreError::Io(_) => ApiError::unavailable(message),
        }
    }
}

fn json_error(e: JsonRejection) -> ApiError {
    ApiError::new(e.status().as_u16().clamp(400, 499), "validation", e.body_text())
}

type ApiResult<T> = Result<T, ApiError>;
type Params = Query<HashMap<String, String>>;

fn param<T: std::str::FromStr>(params: &HashMap<String, String>, name: &str) -> ApiResult<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match params.get(name).map(|s| s.trim()).filter(|s| !s.is_empty()) {
        None => Ok(None),
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|e| ApiError::validation(name, format!("bad `{name}` value `{raw}`: {e}"))),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let upload_limit = state.config.max_upload_bytes;
    let mut app = Router::new()
        .route(
            "/api/datasets",
            post(upload_dataset).layer(DefaultBodyLimit::max(upload_limit)),
        )
        .route("/api/datasets/{id}", get(get_dataset))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/results", get(session_results))
        .route("/api/sessions/{id}/aggregate", get(session_aggregate))
        .route("/api/results", post(post_result))
        .route("/api/workers", get(list_workers))
        .route("/api/workers/heartbeat", post(heartbeat))
        .route("/api/queue/stats", get(queue_stats))
        .route("/api/{*rest}", axum::routing::any(unknown_route));
    if let Some(dir) = &state.config.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    if state.config.cors {
        app = app.layer(CorsLayer::permissive());
    }
    app.with_state(state)
}

/// Serves `router` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    router: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router)
        .with_graceful_shutdown(shutdown)
        .await
}

async fn unknown_route() -> ApiError {
    ApiError::new(404, "not_found", "no such endpoint")
}

async fn upload_dataset(
    State(state): State<Arc<AppState>>,
    Query(params): Params,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<(StatusCode, Json<DatasetSummary>)> {
    let body = body.map_err(|e| {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::new(
                413,
                "too_large",
                format!("upload exceeds {} bytes", state.config.max_upload_bytes),
            )
        } else {
            ApiError::new(400, "bad_csv", e.body_text())
        }
    })?;
    let label: String = param(&params, "label")?
        .ok_or_else(|| ApiError::validation("label", "query parameter `label` is required"))?;
    let seed: u64 = param(&params, "seed")?.unwrap_or(0);
    let dataset = tokio::task::spawn_blocking(move || load_csv(&body, &label, seed))
        .await
        .map_err(|e| ApiError::new(500, "unavailable", format!("preprocessing aborted: {e}")))??;
    let summary = DatasetSummary::of(&dataset);
    let repo = state.datasets.clone();
    tokio::task::spawn_blocking(move || repo.insert(dataset))
        .await
        .map_err(|e| ApiError::unavailable(e.to_string()))?
        .map_err(|e| ApiError::unavailable(format!("cannot persist dataset: {e}")))?;
    tracing::info!(dataset = %summary.dataset_id, rows = summary.n_rows, "dataset stored");
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn get_dataset(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match state.datasets.get(&id) {
        Some(ds) => Json(&*ds).into_response(),
        None => ApiError::not_found("dataset", &id).into_response(),
    }
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    spec: Result<Json<SweepSpec>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<SessionCreated>)> {
    let Json(spec) = spec.map_err(json_error)?;
    let session = state.orchestrator.create_session(&spec).await?;
    Ok((
        StatusCode::CREATED,
        Json(SessionCreated {
            session_id: session.session_id,
            task_count: session.total_tasks,
        }),
    ))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<crate::sweep::Progress>> {
    Ok(Json(state.orchestrator.session_progress(&id)?))
}

fn require_session(state: &AppState, id: &str) -> ApiResult<()> {
    match state.store.session(id) {
        Some(_) => Ok(()),
        None => Err(ApiError::not_found("session", id)),
    }
}

async fn session_results(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(params): Params,
) -> ApiResult<Json<Vec<ResultRecord>>> {
    require_session(&state, &id)?;
    let query = ResultQuery {
        status: param::<TaskStatus>(&params, "status")?,
        activation: param(&params, "activation")?,
        lr_min: param(&params, "lr_min")?,
        lr_max: param(&params, "lr_max")?,
        sort: param::<SortKey>(&params, "sort")?.unwrap_or_default(),
        limit: param(&params, "limit")?,
    };
    Ok(Json(state.store.query(&id, &query)))
}

async fn session_aggregate(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(params): Params,
) -> ApiResult<Json<Vec<crate::store::SeriesPoint>>> {
    require_session(&state, &id)?;
    let x: XField = param(&params, "x")?.unwrap_or(XField::HiddenLayerCount);
    let y: YField = param(&params, "y")?.unwrap_or(YField::Accuracy);
    let reduce: Reducer = param(&params, "reduce")?.unwrap_or(Reducer::Mean);
    Ok(Json(state.store.aggregate(&id, x, y, reduce)))
}

async fn post_result(
    State(state): State<Arc<AppState>>,
    record: Result<Json<ResultRecord>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<ResultPosted>)> {
    let Json(record) = record.map_err(json_error)?;
    let store = state.store.clone();
    let outcome = tokio::task::spawn_blocking(move || store.put_result(record))
        .await
        .map_err(|e| ApiError::unavailable(e.to_string()))??;
    Ok(match outcome {
        PutOutcome::Stored => (
            StatusCode::CREATED,
            Json(ResultPosted {
                outcome: PutOutcomeBody::Stored,
            }),
        ),
        PutOutcome::DuplicateIgnored => (
            StatusCode::OK,
            Json(ResultPosted {
                outcome: PutOutcomeBody::DuplicateIgnored,
            }),
        ),
    })
}

async fn list_workers(State(state): State<Arc<AppState>>) -> Json<Vec<WorkerView>> {
    Json(state.workers())
}

async fn heartbeat(
    State(state): State<Arc<AppState>>,
    status: Result<Json<WorkerStatus>, JsonRejection>,
) -> ApiResult<Json<WorkerView>> {
    let Json(mut status) = status.map_err(json_error)?;
    status
        .validate()
        .map_err(|(field, message)| ApiError::validation(field, message))?;
    // liveness is judged on the gateway's clock, not the worker's
    status.last_heartbeat = state.clock.now();
    state
        .workers
        .write()
        .insert(status.worker_name.clone(), status.clone());
    Ok(Json(WorkerView {
        status,
        online: true,
    }))
}

async fn queue_stats(
    State(state): State<Arc<AppState>>,
    Query(params): Params,
) -> ApiResult<Json<QueueStatsView>> {
    let queue = params
        .get("queue")
        .cloned()
        .unwrap_or_else(|| TASK_QUEUE.to_string());
    let stats = state
        .queue
        .stats(&queue)
        .await
        .map_err(|e| ApiError::unavailable(e.to_string()))?;
    let dead = state
        .queue
        .stats(&dead_letter_queue(&queue))
        .await
        .map_err(|e| ApiError::unavailable(e.to_string()))?;
    Ok(Json(QueueStatsView {
        queue,
        stats,
        dead_lettered: dead.ready_count + dead.leased_count + dead.acked_total,
    }))
}
