//! HTTP API: task submission, status and results from the metastore, module
//! listing from the launcher, and feedback capture.
//!
//! The gateway keeps no state of its own. Every answer is computed from the
//! metastore and the launcher, so it can be restarted at any time.

pub mod api;
mod status;

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;
use uuid::Uuid;
use vpe_core::flowgraph::{
    check_routes, decode_records, encode_taskdata, validate_graph, FieldError, GraphJson,
    IssueCode, NodeId, ValidationReport,
};
use vpe_core::{input_topic_name, now_ms, DataType, ModuleDescriptor, Payload, Producer, TaskData};
use vpe_metastore::{
    FeedbackFilter, FeedbackKind, FeedbackRecord, MetaStore, StoreError, TaskRecord,
};
use vpe_msgbus::Bus;
use vpe_runtime::launcher::{Launcher, ModuleStatus, RemoteLauncher};

use api::*;
pub use status::derive_status;

pub const DEFAULT_PORT: u16 = 7610;

/// Source of the registered modules and what their processors produce.
pub trait ModuleList: Send + Sync {
    fn modules(&self) -> Result<Vec<ModuleStatus>, String>;
}

impl ModuleList for RemoteLauncher {
    fn modules(&self) -> Result<Vec<ModuleStatus>, String> {
        self.list().map_err(|e| e.to_string())
    }
}

impl ModuleList for Launcher {
    fn modules(&self) -> Result<Vec<ModuleStatus>, String> {
        Ok(self.list())
    }
}

impl ModuleList for Vec<ModuleStatus> {
    fn modules(&self) -> Result<Vec<ModuleStatus>, String> {
        Ok(self.clone())
    }
}

#[derive(Clone)]
pub struct Gateway {
    pub store: Arc<dyn MetaStore>,
    pub bus: Arc<dyn Bus>,
    pub modules: Arc<dyn ModuleList>,
    /// A task with no new result for this long is reported STALLED.
    pub stall_after: Duration,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("stall_after", &self.stall_after)
            .finish_non_exhaustive()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    detail: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, detail: impl Into<String>) -> Self {
        Self {
            status,
            code: code.to_owned(),
            detail: detail.into(),
        }
    }

    fn bad_request(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", detail)
    }

    fn not_found(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NOT_FOUND", detail)
    }

    fn unavailable(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "UNAVAILABLE", detail)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match e.code() {
            "NO_RESULT" => StatusCode::NOT_FOUND,
            "BAD_INDEX" | "BAD_FEEDBACK" => StatusCode::UNPROCESSABLE_ENTITY,
            "BAD_REQUEST" => StatusCode::BAD_REQUEST,
            _ => StatusCode::SERVICE_UNAVAILABLE,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code,
            detail: self.detail,
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> T {
    tokio::task::spawn_blocking(f)
        .await
        .expect("blocking task panicked")
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("body: {e}")))
}

fn parse_id(s: &str) -> ApiResult<Uuid> {
    Uuid::parse_str(s).map_err(|_| ApiError::bad_request(format!("task id {s:?} is not a UUID")))
}

fn field(e: FieldError) -> ApiError {
    match e {
        FieldError::Malformed(m) | FieldError::Invalid(m) => ApiError::bad_request(m),
    }
}

/// A graph that cannot be run, with the response it earns.
pub enum Rejection {
    Report(StatusCode, ValidationReport),
    Error(ApiError),
}

impl IntoResponse for Rejection {
    fn into_response(self) -> Response {
        match self {
            Rejection::Report(status, report) => (status, Json(report)).into_response(),
            Rejection::Error(e) => e.into_response(),
        }
    }
}

impl From<ApiError> for Rejection {
    fn from(e: ApiError) -> Self {
        Rejection::Error(e)
    }
}

/// The source TaskData messages of a validated submission, with their topics.
pub fn plan_submission(
    req: &SubmitRequest,
    modules: &[ModuleStatus],
    task_id: Uuid,
) -> Result<Vec<(String, TaskData)>, Rejection> {
    let graph = req.graph.to_graph().map_err(field)?.canonicalized();
    let registry: Vec<ModuleDescriptor> = modules.iter().map(|m| m.descriptor.clone()).collect();
    let mut report = validate_graph(&graph, &[]);
    let known: BTreeMap<_, _> = registry.iter().map(|d| (&d.module_id, d)).collect();
    let mut nodes: Vec<_> = graph.nodes.iter().collect();
    nodes.sort_by_key(|n| n.id);
    for n in &nodes {
        if !known.contains_key(&n.module) {
            report.push(
                IssueCode::UnknownModule,
                format!("node {} names unregistered module {}", n.id, n.module),
            );
        }
    }
    let produces: BTreeMap<_, BTreeSet<DataType>> = modules
        .iter()
        .map(|m| {
            let set = m
                .produces
                .iter()
                .filter_map(|d| DataType::new(d.as_str()).ok())
                .collect();
            (m.descriptor.module_id.clone(), set)
        })
        .collect();
    for issue in check_routes(&graph, &registry, |d| {
        produces.get(&d.module_id).cloned().unwrap_or_default()
    }) {
        report.push(issue.code, issue.detail);
    }

    let structural_ok = !report.has(IssueCode::Cycle) && !report.has(IssueCode::Dangling);
    let sources: BTreeSet<NodeId> = if structural_ok {
        graph.sources().into_iter().collect()
    } else {
        BTreeSet::new()
    };
    let mut payloads = BTreeMap::new();
    for (key, p) in &req.source_payloads {
        let id: NodeId = key.parse().map_err(|_| {
            ApiError::bad_request(format!("source_payloads key {key:?} is not a node id"))
        })?;
        let datatype = DataType::new(p.datatype.as_str())
            .map_err(|e| ApiError::bad_request(format!("node {id}: {e}")))?;
        let records = decode_records(&p.records).map_err(field)?;
        payloads.insert(id, (datatype, records));
    }
    if structural_ok {
        for id in &sources {
            match payloads.get(id) {
                None => report.push(
                    IssueCode::MissingSource,
                    format!("source node {id} has no entry in source_payloads"),
                ),
                Some((dt, _)) => {
                    let node = graph.node(*id).expect("source is a node");
                    if let Some(d) = known.get(&node.module) {
                        if !d.accepts(dt) {
                            report.push(
                                IssueCode::RouteMismatch,
                                format!("source node {id}: {} does not accept {dt}", node.module),
                            );
                        }
                    }
                }
            }
        }
        for id in payloads.keys().filter(|id| !sources.contains(id)) {
            report.push(
                IssueCode::MissingSource,
                format!("source_payloads names node {id}, which is not a source node"),
            );
        }
    }
    if !report.errors.is_empty() {
        let only_unknown = report
            .errors
            .iter()
            .all(|e| e.code == IssueCode::UnknownModule);
        let status = if only_unknown {
            StatusCode::CONFLICT
        } else {
            StatusCode::BAD_REQUEST
        };
        return Err(Rejection::Report(status, report));
    }
    Ok(sources
        .iter()
        .map(|id| {
            let node = graph.node(*id).expect("source is a node");
            let (datatype, records) = payloads.remove(id).expect("checked above");
            let topic = input_topic_name(&node.module, &datatype);
            let td = TaskData {
                task_id,
                nme: *id,
                graph: graph.clone(),
                payload: Payload::new(datatype, records, Producer::Source),
            };
            (topic, td)
        })
        .collect())
}

async fn submit(State(gw): State<Gateway>, body: Bytes) -> Result<Response, Rejection> {
    let req: SubmitRequest = parse_body(&body)?;
    let task_id = Uuid::new_v4();
    blocking(move || {
        let modules = gw.modules.modules().map_err(ApiError::unavailable)?;
        let plan = plan_submission(&req, &modules, task_id)?;
        let graph = GraphJson::from(&plan[0].1.graph);
        gw.store
            .save_task(&TaskRecord {
                task_id,
                graph,
                created_at: now_ms(),
            })
            .map_err(ApiError::from)?;
        for (topic, td) in &plan {
            let bytes = encode_taskdata(td).map_err(|e| ApiError::bad_request(e.to_string()))?;
            gw.bus
                .publish(topic, task_id, &bytes)
                .map_err(|e| ApiError::unavailable(format!("publish to {topic}: {e}")))?;
        }
        tracing::info!(task = %task_id, sources = plan.len(), "task submitted");
        Ok((StatusCode::CREATED, Json(SubmitReply { task_id })).into_response())
    })
    .await
}

async fn task_status(
    State(gw): State<Gateway>,
    Path(id): Path<String>,
) -> ApiResult<Json<TaskStatus>> {
    let task_id = parse_id(&id)?;
    blocking(move || {
        let task = gw
            .store
            .get_task(task_id)?
            .ok_or_else(|| ApiError::not_found(format!("no task {task_id}")))?;
        let results = gw.store.query_results(task_id, None)?;
        Ok(Json(derive_status(
            &task,
            &results,
            now_ms(),
            gw.stall_after,
        )))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct ResultsQuery {
    node: Option<NodeId>,
    limit: Option<usize>,
    offset: Option<usize>,
}

async fn task_results(
    State(gw): State<Gateway>,
    Path(id): Path<String>,
    Query(q): Query<ResultsQuery>,
) -> ApiResult<Json<ResultsReply>> {
    let task_id = parse_id(&id)?;
    blocking(move || {
        if gw.store.get_task(task_id)?.is_none() {
            return Err(ApiError::not_found(format!("no task {task_id}")));
        }
        let offset = q.offset.unwrap_or(0);
        let results = gw
            .store
            .query_results(task_id, q.node)?
            .into_iter()
            .map(|r| {
                let window = r
                    .records
                    .iter()
                    .skip(offset)
                    .take(q.limit.unwrap_or(usize::MAX));
                ResultEntry {
                    node_id: r.node_id,
                    module_id: r.module_id.clone(),
                    datatype: r.datatype.clone(),
                    records: vpe_core::flowgraph::encode_records(
                        &window.cloned().collect::<Vec<_>>(),
                    ),
                    record_count: r.records.len(),
                    offset,
                    created_at: r.created_at,
                }
            })
            .collect();
        Ok(Json(ResultsReply { task_id, results }))
    })
    .await
}

#[derive(Debug, Serialize)]
struct ModulesReply {
    modules: Vec<ModuleStatus>,
}

async fn modules(State(gw): State<Gateway>) -> ApiResult<Json<ModulesReply>> {
    blocking(move || {
        let modules = gw.modules.modules().map_err(ApiError::unavailable)?;
        Ok(Json(ModulesReply { modules }))
    })
    .await
}

fn feedback_record(req: FeedbackRequest) -> ApiResult<FeedbackRecord> {
    let unprocessable =
        |m: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "BAD_FEEDBACK", m);
    let satisfaction = match req.satisfaction {
        Some(v) if (1..=5).contains(&v) => Some(v as u8),
        Some(v) => return Err(unprocessable(format!("satisfaction {v} outside 1..=5"))),
        None => None,
    };
    let revision = match req.revision {
        Some(r) => Some(
            decode_records(&[r])
                .map_err(|_| unprocessable("revision is not base64".into()))?
                .remove(0),
        ),
        None => None,
    };
    let record = FeedbackRecord {
        feedback_id: req.feedback_id.unwrap_or_else(Uuid::new_v4),
        task_id: req.task_id,
        node_id: req.node_id,
        kind: req.kind,
        satisfaction,
        selected_record_indices: req.selected_record_indices,
        revision,
        created_at: now_ms(),
    };
    record.check_shape()?;
    Ok(record)
}

async fn save_feedback(State(gw): State<Gateway>, body: Bytes) -> ApiResult<Response> {
    let record = feedback_record(parse_body(&body)?)?;
    blocking(move || {
        gw.store.save_feedback(&record)?;
        let reply = FeedbackReply {
            feedback_id: record.feedback_id,
        };
        Ok((StatusCode::CREATED, Json(reply)).into_response())
    })
    .await
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    module: Option<String>,
    kind: Option<FeedbackKind>,
    since: Option<u64>,
}

#[derive(Debug, Serialize)]
struct ExportReply {
    feedback: Vec<FeedbackRecord>,
}

async fn export_feedback(
    State(gw): State<Gateway>,
    Query(q): Query<ExportQuery>,
) -> ApiResult<Json<ExportReply>> {
    blocking(move || {
        let filter = FeedbackFilter {
            module_id: q.module,
            kind: q.kind,
            since: q.since,
        };
        Ok(Json(ExportReply {
            feedback: gw.store.export_feedback(&filter)?,
        }))
    })
    .await
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "ok": true }))
}

pub fn router(gw: Gateway) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/tasks", post(submit))
        .route("/tasks/{id}", get(task_status))
        .route("/tasks/{id}/results", get(task_results))
        .route("/modules", get(modules))
        .route("/feedback", post(save_feedback).get(export_feedback))
        .layer(CorsLayer::permissive())
        .with_state(gw)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    gw: Gateway,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(gw))
        .with_graceful_shutdown(shutdown)
        .await
}

/// A gateway running on its own runtime thread.
#[derive(Debug)]
pub struct Running {
    pub addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl Running {
    pub fn start(listener: std::net::TcpListener, gw: Gateway) -> std::io::Result<Self> {
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener)?;
                serve(listener, gw, async {
                    let _ = rx.await;
                })
                .await
            })
        });
        Ok(Self {
            addr,
            stop: Some(tx),
            thread: Some(thread),
        })
    }

    /// Blocks until the server exits.
    pub fn wait(mut self) -> std::io::Result<()> {
        self.thread
            .take()
            .expect("running")
            .join()
            .expect("gateway thread panicked")
    }

    pub fn stop(mut self) -> std::io::Result<()> {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        self.thread
            .take()
            .expect("running")
            .join()
            .expect("gateway thread panicked")
    }
}

impl Drop for Running {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
    }
}
