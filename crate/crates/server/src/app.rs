//! The HTTP API. Handlers are thin: they look up the session, hand the
//! blocking library call to the tokio blocking pool, and map errors to
//! status codes.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kgforage::discovery::{attribute_histogram, discover_related, DiscoveryConfig, DiscoveryError};
use kgforage::graph_store::{Datatype, Value};
use kgforage::kg_client::{BackendConfig, KgClient};
use kgforage::materializer::{example_subgraph, materialize, preview_join};
use kgforage::planner::{allowed_aggregations, AggOp, Cardinality, HopPosition, JoinPlan};
use kgforage::tabular::{export_csv, import_csv, ColumnType, CsvOptions, Dataset, Provenance};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::session::{JobStatus, Session, SessionStore, Snapshot};

pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 50 * 1024 * 1024;
pub const DEFAULT_SESSION_TTL: Duration = Duration::from_secs(2 * 60 * 60);
/// Commits still running after this long answer 202 with a poll URL.
pub const DEFAULT_COMMIT_WAIT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone)]
pub struct AppConfig {
    pub backend: BackendConfig,
    pub max_upload_bytes: usize,
    pub session_ttl: Duration,
    pub commit_wait: Duration,
}

impl AppConfig {
    pub fn new(backend: BackendConfig) -> Self {
        AppConfig {
            backend,
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
            session_ttl: DEFAULT_SESSION_TTL,
            commit_wait: DEFAULT_COMMIT_WAIT,
        }
    }
}

pub struct AppState {
    pub config: AppConfig,
    pub sessions: SessionStore,
    default_client: Arc<KgClient>,
    /// Clients for backends named at upload time, by selector.
    clients: Mutex<HashMap<String, Arc<KgClient>>>,
}

impl AppState {
    pub fn new(config: AppConfig) -> Result<Arc<Self>, kgforage::kg_client::ClientError> {
        let default_client = Arc::new(KgClient::connect(&config.backend)?);
        Ok(Self::with_client(config, default_client))
    }

    /// Uses an already-built client as the default backend.
    pub fn with_client(config: AppConfig, client: Arc<KgClient>) -> Arc<Self> {
        Arc::new(AppState {
            sessions: SessionStore::new(config.session_ttl),
            config,
            default_client: client,
            clients: Mutex::new(HashMap::new()),
        })
    }

    fn client_for(&self, selector: Option<&str>) -> Result<Arc<KgClient>, ApiError> {
        let Some(selector) = selector.map(str::trim).filter(|s| !s.is_empty()) else {
            return Ok(self.default_client.clone());
        };
        if let Some(c) = self.clients.lock().expect("clients lock").get(selector) {
            return Ok(c.clone());
        }
        let mut cfg = BackendConfig::from_selector(selector)?.with_env_overrides();
        cfg.max_concurrency = self.config.backend.max_concurrency;
        cfg.request_timeout = self.config.backend.request_timeout;
        cfg.batch_size = self.config.backend.batch_size;
        let client = Arc::new(KgClient::connect(&cfg)?);
        self.clients
            .lock()
            .expect("clients lock")
            .insert(selector.to_string(), client.clone());
        Ok(client)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.max_upload_bytes;
    Router::new()
        .route("/aggregations", get(aggregations))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", axum::routing::delete(delete_session))
        .route("/sessions/{id}/columns", get(columns))
        .route(
            "/sessions/{id}/columns/{name}",
            axum::routing::patch(patch_column),
        )
        .route("/sessions/{id}/columns/{name}/related", get(related))
        .route("/sessions/{id}/columns/{name}/detail", get(detail))
        .route("/sessions/{id}/joins:preview", post(preview))
        .route("/sessions/{id}/joins", post(commit))
        .route("/sessions/{id}/jobs/{job}", get(job))
        .route("/sessions/{id}/subgraph", post(subgraph))
        .route("/sessions/{id}/preview", get(rows))
        .route("/sessions/{id}/export", get(export))
        .route("/sessions/{id}/export/plans", get(export_plans))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

#[derive(Debug, Serialize)]
pub struct ColumnInfo {
    pub name: String,
    #[serde(rename = "type")]
    pub ctype: ColumnType,
    pub enabled: bool,
    pub augmented: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parent_column: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<JoinPlan>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct ColumnsView {
    pub session: String,
    pub version: u64,
    pub row_count: usize,
    pub columns: Vec<ColumnInfo>,
    pub join_history: Vec<JoinPlan>,
}

fn columns_view(id: &str, snap: &Snapshot) -> ColumnsView {
    let d = &snap.dataset;
    ColumnsView {
        session: id.to_string(),
        version: d.version,
        row_count: d.row_count,
        columns: d
            .columns
            .iter()
            .map(|c| ColumnInfo {
                name: c.name.clone(),
                ctype: c.ctype,
                enabled: c.enabled,
                augmented: c.is_augmented(),
                parent_column: c.provenance.as_ref().map(|p| p.parent_column.clone()),
                plan: c.provenance.as_ref().map(|p: &Provenance| p.plan.clone()),
                unit: c.provenance.as_ref().and_then(|p| p.unit.clone()),
            })
            .collect(),
        join_history: snap.join_history.clone(),
    }
}

#[derive(Debug, Default, Deserialize)]
struct UploadParams {
    backend: Option<String>,
    delimiter: Option<String>,
    header: Option<bool>,
    name: Option<String>,
}

fn parse_delimiter(text: Option<&str>) -> Result<u8, ApiError> {
    match text {
        None | Some("") => Ok(b','),
        Some("tab") | Some("\\t") | Some("\t") => Ok(b'\t'),
        Some(s) if s.len() == 1 && s.is_ascii() => Ok(s.as_bytes()[0]),
        Some(s) => Err(ApiError::bad_request(format!(
            "delimiter must be a single ASCII character, got {s:?}"
        ))),
    }
}

fn upload_error(status: StatusCode, message: String) -> ApiError {
    if status == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::new(status, "TooLarge", message)
    } else {
        ApiError::bad_request(message)
    }
}

/// `POST /sessions`: the CSV is the raw body, or the `file` part of a
/// multipart form. Options come from the query string or form fields.
async fn create_session(
    State(state): State<Arc<AppState>>,
    Query(mut params): Query<UploadParams>,
    headers: HeaderMap,
    request: Request,
) -> Result<Response, ApiError> {
    let multipart = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let bytes = if multipart {
        let mut form = Multipart::from_request(request, &state)
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        let mut file = None;
        while let Some(field) = form
            .next_field()
            .await
            .map_err(|e| upload_error(e.status(), e.body_text()))?
        {
            let field_name = field.name().unwrap_or_default().to_string();
            let file_name = field.file_name().map(str::to_string);
            let data = field
                .bytes()
                .await
                .map_err(|e| upload_error(e.status(), e.body_text()))?;
            let text = || String::from_utf8_lossy(&data).into_owned();
            match field_name.as_str() {
                "file" | "csv" => {
                    if params.name.is_none() {
                        params.name = file_name;
                    }
                    file = Some(data.clone());
                }
                "backend" => params.backend = Some(text()),
                "delimiter" => params.delimiter = Some(text()),
                "header" => params.header = Some(text().trim() != "false"),
                _ => {}
            }
        }
        file.ok_or_else(|| ApiError::bad_request("multipart upload has no file field"))?
    } else {
        Bytes::from_request(request, &state)
            .await
            .map_err(|e| upload_error(e.status(), e.body_text()))?
    };
    if bytes.len() > state.config.max_upload_bytes {
        return Err(upload_error(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("upload exceeds {} bytes", state.config.max_upload_bytes),
        ));
    }
    let options = CsvOptions {
        has_header: params.header.unwrap_or(true),
        delimiter: parse_delimiter(params.delimiter.as_deref())?,
    };
    let client = state.client_for(params.backend.as_deref())?;
    let dataset = blocking(move || Ok(import_csv(&bytes, options)?)).await?;
    let session = state.sessions.create(
        dataset,
        client,
        params.name.unwrap_or_else(|| "dataset.csv".into()),
    );
    log::info!("session {} created", session.id);
    let view = columns_view(&session.id, &session.snapshot());
    Ok(Json(view).into_response())
}

async fn delete_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<StatusCode, ApiError> {
    if state.sessions.remove(&id) {
        Ok(StatusCode::NO_CONTENT)
    } else {
        Err(ApiError::session_not_found(&id))
    }
}

async fn columns(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<ColumnsView>, ApiError> {
    let session = state.sessions.get(&id)?;
    Ok(Json(columns_view(&id, &session.snapshot())))
}

#[derive(Debug, Deserialize)]
struct PatchColumn {
    enabled: bool,
}

async fn patch_column(
    State(state): State<Arc<AppState>>,
    Path((id, name)): Path<(String, String)>,
    Json(body): Json<PatchColumn>,
) -> Result<Json<ColumnsView>, ApiError> {
    let session = state.sessions.get(&id)?;
    let writer = session.writer();
    let _guard = writer.lock().await;
    let snap = session.snapshot();
    let dataset = snap.dataset.set_enabled(&name, body.enabled)?;
    session.replace(Snapshot {
        dataset,
        join_history: snap.join_history.clone(),
    });
    Ok(Json(columns_view(&id, &session.snapshot())))
}

#[derive(Debug, Default, Deserialize)]
struct DiscoveryParams {
    sample_size: Option<usize>,
    top_k: Option<usize>,
    detail_sample: Option<usize>,
    seed: Option<u64>,
    property: Option<String>,
}

impl DiscoveryParams {
    fn has_overrides(&self) -> bool {
        self.sample_size.is_some()
            || self.top_k.is_some()
            || self.detail_sample.is_some()
            || self.seed.is_some()
    }

    fn config(&self) -> DiscoveryConfig {
        let d = DiscoveryConfig::default();
        DiscoveryConfig {
            sample_size: self.sample_size.unwrap_or(d.sample_size),
            top_k: self.top_k.unwrap_or(d.top_k),
            detail_sample: self.detail_sample.unwrap_or(d.detail_sample),
            rng_seed: self.seed.or(d.rng_seed),
        }
    }
}

async fn run_discovery(
    session: &Arc<Session>,
    column: &str,
    cfg: DiscoveryConfig,
) -> Result<Arc<Vec<kgforage::discovery::AttributeDescriptor>>, ApiError> {
    let snap = session.snapshot();
    let client = session.client.clone();
    let col = column.to_string();
    let found = blocking(move || Ok(discover_related(&client, &snap.dataset, &col, &cfg)?)).await?;
    let found = Arc::new(found);
    session.cache_related(column, cfg, found.clone());
    Ok(found)
}

/// `GET …/related`: descriptors ordered by coverage, then property id.
async fn related(
    State(state): State<Arc<AppState>>,
    Path((id, name)): Path<(String, String)>,
    Query(params): Query<DiscoveryParams>,
) -> Result<Response, ApiError> {
    let session = state.sessions.get(&id)?;
    let found = run_discovery(&session, &name, params.config()).await?;
    Ok(Json(&*found).into_response())
}

/// `GET …/detail?property=P…`: one descriptor with its histogram. Reuses the
/// last related list for the column unless discovery options are given.
async fn detail(
    State(state): State<Arc<AppState>>,
    Path((id, name)): Path<(String, String)>,
    Query(params): Query<DiscoveryParams>,
) -> Result<Response, ApiError> {
    let session = state.sessions.get(&id)?;
    let property = params
        .property
        .clone()
        .ok_or_else(|| ApiError::bad_request("missing query parameter property"))?;
    let found = match session.cached_related(&name) {
        Some((_, found)) if !params.has_overrides() => found,
        _ => run_discovery(&session, &name, params.config()).await?,
    };
    let descriptor = found
        .iter()
        .find(|d| d.property.as_str() == property)
        .ok_or_else(|| {
            ApiError::new(
                StatusCode::NOT_FOUND,
                "UnknownProperty",
                format!("{property} is not among the related attributes of {name:?}"),
            )
        })?;
    let histogram = match attribute_histogram(descriptor) {
        Ok(h) => Some(h),
        Err(DiscoveryError::EmptySample) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(Json(serde_json::json!({
        "descriptor": descriptor,
        "histogram": histogram,
    }))
    .into_response())
}

async fn preview(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(plan): Json<JoinPlan>,
) -> Result<Response, ApiError> {
    let session = state.sessions.get(&id)?;
    let snap = session.snapshot();
    let client = session.client.clone();
    let p = blocking(move || Ok(preview_join(&client, &snap.dataset, &plan)?)).await?;
    Ok(Json(p).into_response())
}

#[derive(Debug, Serialize)]
struct CommitResponse {
    column: String,
    #[serde(flatten)]
    view: ColumnsView,
}

/// `POST …/joins`: materializes and appends a column. Runs under the
/// session's writer lock; if it takes longer than the configured wait the
/// response is 202 with a job URL to poll.
async fn commit(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(plan): Json<JoinPlan>,
) -> Result<Response, ApiError> {
    let session = state.sessions.get(&id)?;
    let job = uuid::Uuid::new_v4().simple().to_string();
    session.set_job(&job, JobStatus::Running);
    let task_session = session.clone();
    let task_job = job.clone();
    let mut handle = tokio::spawn(async move {
        let s = task_session;
        let writer = s.writer();
        let _guard = writer.lock().await;
        let snap = s.snapshot();
        let client = s.client.clone();
        let base = snap.clone();
        let result = blocking(move || Ok(materialize(&client, &base.dataset, &plan)?)).await;
        let status = match result {
            Ok(dataset) => {
                let column = dataset.columns.last().expect("a column was appended");
                let name = column.name.clone();
                let recorded = column
                    .provenance
                    .as_ref()
                    .expect("augmented columns have provenance")
                    .plan
                    .clone();
                let version = dataset.version;
                let mut join_history = snap.join_history.clone();
                join_history.push(recorded);
                s.replace(Snapshot {
                    dataset,
                    join_history,
                });
                JobStatus::Done {
                    column: name,
                    version,
                }
            }
            Err(error) => JobStatus::Failed { error },
        };
        s.set_job(&task_job, status.clone());
        status
    });
    match tokio::time::timeout(state.config.commit_wait, &mut handle).await {
        Ok(Ok(JobStatus::Done { column, .. })) => Ok(Json(CommitResponse {
            column,
            view: columns_view(&id, &session.snapshot()),
        })
        .into_response()),
        Ok(Ok(JobStatus::Failed { error })) => Err(error),
        Ok(Ok(JobStatus::Running)) => unreachable!("the task reports a final status"),
        Ok(Err(e)) => Err(ApiError::internal(format!("commit task failed: {e}"))),
        Err(_) => {
            let poll = format!("/sessions/{id}/jobs/{job}");
            Ok((
                StatusCode::ACCEPTED,
                [(header::LOCATION, poll.clone())],
                Json(serde_json::json!({"job": job, "status": "running", "poll": poll})),
            )
                .into_response())
        }
    }
}

async fn job(
    State(state): State<Arc<AppState>>,
    Path((id, job)): Path<(String, String)>,
) -> Result<Json<JobStatus>, ApiError> {
    let session = state.sessions.get(&id)?;
    session.job(&job).map(Json).ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "JobNotFound",
            format!("no job {job:?}"),
        )
    })
}

#[derive(Debug, Deserialize)]
struct SubgraphRequest {
    plan: JoinPlan,
    #[serde(default)]
    row: usize,
}

#[derive(Debug, Default, Deserialize)]
struct SubgraphParams {
    /// Comma-separated per-level ops, outermost first.
    ops: Option<String>,
}

/// `POST …/subgraph[?ops=max,min]`: the sampled neighbourhood of one row.
/// With `ops`, the result is refolded under those ops; nothing is stored.
async fn subgraph(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(params): Query<SubgraphParams>,
    Json(req): Json<SubgraphRequest>,
) -> Result<Response, ApiError> {
    let session = state.sessions.get(&id)?;
    let ops: Option<Vec<AggOp>> = params
        .ops
        .as_deref()
        .map(|s| s.split(',').map(str::parse).collect::<Result<_, _>>())
        .transpose()
        .map_err(ApiError::bad_request)?;
    if let Some(ops) = &ops {
        if ops.len() != req.plan.depth() {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "PlanError",
                format!("expected {} ops, got {}", req.plan.depth(), ops.len()),
            ));
        }
    }
    let snap = session.snapshot();
    let client = session.client.clone();
    let sample = blocking(move || {
        let sample = example_subgraph(&client, &snap.dataset, &req.plan, req.row)?;
        Ok(match ops {
            Some(ops) => sample.with_ops(&ops)?,
            None => sample,
        })
    })
    .await?;
    Ok(Json(sample).into_response())
}

#[derive(Debug, Deserialize)]
struct RowsParams {
    n: Option<usize>,
}

#[derive(Debug, Serialize)]
struct RowsView {
    version: u64,
    row_count: usize,
    columns: Vec<String>,
    types: Vec<ColumnType>,
    rows: Vec<Vec<Option<Value>>>,
}

/// `GET …/preview?n=10`: the first rows of the enabled columns.
async fn rows(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(params): Query<RowsParams>,
) -> Result<Json<RowsView>, ApiError> {
    let session = state.sessions.get(&id)?;
    let snap = session.snapshot();
    let head: Dataset = snap.dataset.head(params.n.unwrap_or(10));
    Ok(Json(RowsView {
        version: snap.dataset.version,
        row_count: snap.dataset.row_count,
        columns: head.columns.iter().map(|c| c.name.clone()).collect(),
        types: head.columns.iter().map(|c| c.ctype).collect(),
        rows: (0..head.row_count)
            .map(|r| head.columns.iter().map(|c| c.cells[r].clone()).collect())
            .collect(),
    }))
}

fn stem(name: &str) -> String {
    let base = std::path::Path::new(name)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let clean: String = base
        .chars()
        .filter(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        .collect();
    if clean.is_empty() {
        "dataset".into()
    } else {
        clean
    }
}

fn attachment(file_name: String) -> String {
    format!("attachment; filename=\"{file_name}\"")
}

/// `GET …/export`: enabled columns as CSV.
async fn export(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let session = state.sessions.get(&id)?;
    let bytes = export_csv(&session.snapshot().dataset);
    Ok((
        [
            (header::CONTENT_TYPE, "text/csv; charset=utf-8".to_string()),
            (
                header::CONTENT_DISPOSITION,
                attachment(format!("{}.csv", stem(&session.source_name))),
            ),
        ],
        bytes,
    )
        .into_response())
}

/// `GET …/export/plans`: the plan sidecar matching [`export`].
async fn export_plans(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let session = state.sessions.get(&id)?;
    let sidecar = session.snapshot().dataset.plan_sidecar();
    Ok((
        [(
            header::CONTENT_DISPOSITION,
            attachment(format!("{}.plan.json", stem(&session.source_name))),
        )],
        Json(sidecar),
    )
        .into_response())
}

#[derive(Debug, Serialize)]
struct AggregationMenu {
    datatype: Datatype,
    cardinality: Cardinality,
    position: HopPosition,
    ops: Vec<AggOp>,
}

/// `GET /aggregations`: every aggregation menu, for building UI controls.
async fn aggregations() -> Json<serde_json::Value> {
    let mut menus = Vec::new();
    for datatype in [
        Datatype::Entity,
        Datatype::Number,
        Datatype::String,
        Datatype::Datetime,
    ] {
        for cardinality in [Cardinality::One, Cardinality::Many] {
            for position in [HopPosition::Intermediate, HopPosition::Final] {
                if position == HopPosition::Intermediate && datatype != Datatype::Entity {
                    continue;
                }
                menus.push(AggregationMenu {
                    datatype,
                    cardinality,
                    position,
                    ops: allowed_aggregations(datatype, cardinality, position),
                });
            }
        }
    }
    Json(serde_json::json!({"ops": AggOp::ALL, "menus": menus}))
}

/// Serves until ctrl-c, sweeping expired sessions once a minute.
pub async fn serve(state: Arc<AppState>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    let sweeper_state = state.clone();
    let sweeper = tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            let dropped = sweeper_state.sessions.sweep();
            if dropped > 0 {
                log::info!("dropped {dropped} expired sessions");
            }
        }
    });
    let result = axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await;
    sweeper.abort();
    result
}
