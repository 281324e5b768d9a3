//! HTTP control plane and websocket telemetry for live runs.
//!
//! Each run executes on its own OS thread. Handlers talk to it only through
//! an ordered command channel (acknowledged with the effective tick) and
//! three broadcast frame streams. Finished and aborted runs are persisted
//! under `<data_dir>/runs/<run_id>/`.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::ws::rejection::WebSocketUpgradeRejection;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{broadcast, oneshot};

use crate::engine::{EngineError, EventKind, JammerLogEntry, RunConfig, RunRecord, Simulation, TickOutput};
use crate::network::LinkMetrics;
use crate::waveforms::PsdFrame;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_CAPACITY: usize = 4;
pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_STREAM_BUFFER: usize = 1024;
const ACK_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub capacity: usize,
    /// Frames buffered per stream before slow subscribers start losing the oldest.
    pub stream_buffer: usize,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self { data_dir: data_dir.into(), capacity: DEFAULT_CAPACITY, stream_buffer: DEFAULT_STREAM_BUFFER }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Pending,
    Live,
    Finished,
    Aborted,
}

impl RunState {
    fn is_active(self) -> bool {
        matches!(self, RunState::Pending | RunState::Live)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Metrics,
    Spectrogram,
    JammerLog,
}

impl StreamKind {
    pub const ALL: [StreamKind; 3] = [StreamKind::Metrics, StreamKind::Spectrogram, StreamKind::JammerLog];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "metrics" => Some(Self::Metrics),
            "spectrogram" => Some(Self::Spectrogram),
            "jammer_log" => Some(Self::JammerLog),
            _ => None,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    Data,
    /// Frames were dropped between the previous frame and this one.
    Gap,
    End,
}

/// One websocket message. `tick` and `time_s` are absent on gap and end frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub schema_version: u32,
    pub stream: StreamKind,
    pub tick: Option<u64>,
    pub time_s: Option<f64>,
    pub kind: FrameKind,
    pub payload: Value,
}

impl Frame {
    fn data(stream: StreamKind, tick: u64, time_s: f64, payload: Value) -> Self {
        Self { schema_version: SCHEMA_VERSION, stream, tick: Some(tick), time_s: Some(time_s), kind: FrameKind::Data, payload }
    }

    fn marker(stream: StreamKind, kind: FrameKind, payload: Value) -> Self {
        Self { schema_version: SCHEMA_VERSION, stream, tick: None, time_s: None, kind, payload }
    }
}

pub fn metrics_payload(rows: &[LinkMetrics]) -> Value {
    json!({ "links": rows })
}

/// Spectrogram bins travel as base64 of little-endian f32.
pub fn spectrogram_payload(frame: &PsdFrame) -> Value {
    let mut raw = Vec::with_capacity(4 * frame.power_db.len());
    for p in &frame.power_db {
        raw.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    json!({
        "freq_start_hz": frame.freq_start_hz,
        "freq_step_hz": frame.freq_step_hz,
        "n_bins": frame.power_db.len(),
        "encoding": "f32le-base64",
        "bins": base64::engine::general_purpose::STANDARD.encode(raw),
    })
}

/// Inverse of [`spectrogram_payload`]'s bin encoding.
pub fn decode_bins(payload: &Value) -> Option<Vec<f32>> {
    let raw = base64::engine::general_purpose::STANDARD.decode(payload.get("bins")?.as_str()?).ok()?;
    Some(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

pub fn jammer_payload(entry: &JammerLogEntry) -> Value {
    serde_json::to_value(entry).expect("log entry serializes")
}

fn tick_frames(out: &TickOutput) -> Vec<Frame> {
    let mut v = vec![Frame::data(StreamKind::Metrics, out.tick, out.time_s, metrics_payload(&out.metrics))];
    if let Some(s) = &out.spectrogram {
        v.push(Frame::data(StreamKind::Spectrogram, out.tick, out.time_s, spectrogram_payload(s)));
    }
    if let Some(j) = &out.jammer {
        v.push(Frame::data(StreamKind::JammerLog, out.tick, out.time_s, jammer_payload(j)));
    }
    v
}

/// All data frames of a finished record, per stream, in tick order.
pub fn record_frames(record: &RunRecord, stream: StreamKind) -> Vec<Frame> {
    let tick_s = record.config.tick_s;
    match stream {
        StreamKind::Metrics => {
            let rows: Vec<LinkMetrics> = record.metrics_rows().collect();
            let per_tick = record.links.len().max(1);
            (0..record.n_ticks)
                .map(|k| {
                    let chunk = rows.get(k as usize * per_tick..(k as usize + 1) * per_tick).unwrap_or(&[]);
                    Frame::data(stream, k, k as f64 * tick_s, metrics_payload(chunk))
                })
                .collect()
        }
        StreamKind::Spectrogram => record
            .spectrogram
            .iter()
            .map(|f| Frame::data(stream, f.tick, f.frame.timestamp_s, spectrogram_payload(&f.frame)))
            .collect(),
        StreamKind::JammerLog => {
            record.jammer_log.iter().map(|e| Frame::data(stream, e.tick, e.time_s, jammer_payload(e))).collect()
        }
    }
}

enum Control {
    Command(EventKind, oneshot::Sender<Result<u64, EngineError>>),
    Abort,
}

struct Lifecycle {
    state: RunState,
    error: Option<String>,
    record: Option<Arc<RunRecord>>,
}

struct RunShared {
    id: String,
    config_hash: String,
    n_ticks: u64,
    tick_s: f64,
    started_at_s: u64,
    realtime_factor: f64,
    next_tick: AtomicU64,
    lifecycle: Mutex<Lifecycle>,
    control: Mutex<mpsc::Sender<Control>>,
    streams: [broadcast::Sender<Arc<Frame>>; 3],
    dir: PathBuf,
}

impl RunShared {
    fn status(&self) -> Value {
        let lc = self.lifecycle.lock().unwrap();
        json!({
            "schema_version": SCHEMA_VERSION,
            "run_id": self.id,
            "state": lc.state,
            "tick": self.next_tick.load(Ordering::SeqCst),
            "n_ticks": self.n_ticks,
            "tick_s": self.tick_s,
            "config_hash": self.config_hash,
            "started_at_s": self.started_at_s,
            "realtime_factor": self.realtime_factor,
            "error": lc.error,
        })
    }
}

struct Registry {
    config: ServiceConfig,
    runs: Mutex<BTreeMap<String, Arc<RunShared>>>,
}

#[derive(Clone)]
pub struct AppState(Arc<Registry>);

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self(Arc::new(Registry { config, runs: Mutex::new(BTreeMap::new()) }))
    }
}

/// `POST /runs` body.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRequest {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub config: RunConfig,
    /// Simulated seconds per wall-clock second; 0 runs unpaced.
    #[serde(default = "one")]
    pub realtime_factor: f64,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}
fn one() -> f64 {
    1.0
}

/// `POST /runs/{id}/jammer` body: an [`EventKind`] plus the optional envelope version.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommandRequest {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(flatten)]
    pub command: EventKind,
}

struct ApiError {
    status: StatusCode,
    code: &'static str,
    field: Option<String>,
    reason: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, reason: impl Into<String>) -> Self {
        Self { status, code, field: None, reason: reason.into() }
    }

    fn field(mut self, field: impl Into<String>) -> Self {
        self.field = Some(field.into());
        self
    }

    fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("unknown {what}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "schema_version": SCHEMA_VERSION,
            "error": self.code,
            "field": self.field,
            "reason": self.reason,
        });
        (self.status, Json(body)).into_response()
    }
}

fn engine_error(e: EngineError) -> ApiError {
    match e {
        EngineError::InvalidConfig { field, reason } => {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", reason).field(format!("config.{field}"))
        }
        EngineError::Scenario(e) => {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", e.to_string()).field("config.scenario")
        }
        EngineError::BadCommand(r) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_command", r),
        EngineError::NotLive => ApiError::new(StatusCode::CONFLICT, "not_live", "run is not live"),
        other => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", other.to_string()),
    }
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8], code: &'static str) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let mut path = e.path().to_string();
        let reason = e.inner().to_string();
        if let Some(name) = reason.strip_prefix("missing field `").and_then(|r| r.split('`').next()) {
            path = if path == "." { name.to_string() } else { format!("{path}.{name}") };
        }
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, code, reason).field(path)
    })
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/runs", post(start_run).get(list_runs))
        .route("/runs/{id}", get(run_status).delete(abort_run))
        .route("/runs/{id}/jammer", post(control_jammer))
        .route("/runs/{id}/stream/{stream}", get(subscribe))
        .route("/runs/{id}/record", get(record_manifest))
        .route("/runs/{id}/record/{file}", get(record_file))
        .with_state(state)
}

fn lookup(state: &AppState, id: &str) -> Result<Arc<RunShared>, ApiError> {
    state.0.runs.lock().unwrap().get(id).cloned().ok_or_else(|| ApiError::not_found("run"))
}

async fn list_runs(State(state): State<AppState>) -> Json<Value> {
    let runs: Vec<Value> = state.0.runs.lock().unwrap().values().map(|r| r.status()).collect();
    Json(json!({ "schema_version": SCHEMA_VERSION, "runs": runs }))
}

async fn start_run(State(state): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<Value>), ApiError> {
    let req: RunRequest = parse_body(&body, "invalid_config")?;
    if req.schema_version != SCHEMA_VERSION {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", "unsupported schema_version")
            .field("schema_version"));
    }
    if !(req.realtime_factor >= 0.0 && req.realtime_factor.is_finite()) {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", "must be finite and >= 0")
            .field("realtime_factor"));
    }
    let sim = Simulation::new(req.config).map_err(engine_error)?;

    let mut runs = state.0.runs.lock().unwrap();
    let active = runs.values().filter(|r| r.lifecycle.lock().unwrap().state.is_active()).count();
    if active >= state.0.config.capacity {
        return Err(ApiError::new(StatusCode::TOO_MANY_REQUESTS, "capacity", format!("{active} runs already active")));
    }
    let id = uuid::Uuid::new_v4().to_string();
    let (tx, rx) = mpsc::channel();
    let shared = Arc::new(RunShared {
        id: id.clone(),
        config_hash: sim.record().config_hash.clone(),
        n_ticks: sim.n_ticks(),
        tick_s: sim.config().tick_s,
        started_at_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        realtime_factor: req.realtime_factor,
        next_tick: AtomicU64::new(0),
        lifecycle: Mutex::new(Lifecycle { state: RunState::Pending, error: None, record: None }),
        control: Mutex::new(tx),
        streams: std::array::from_fn(|_| broadcast::channel(state.0.config.stream_buffer.max(1)).0),
        dir: state.0.config.data_dir.join("runs").join(&id),
    });
    runs.insert(id.clone(), shared.clone());
    drop(runs);

    let worker = shared.clone();
    std::thread::Builder::new()
        .name(format!("run-{id}"))
        .spawn(move || drive(worker, sim, rx))
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "spawn", e.to_string()))?;
    tracing::info!(run_id = %id, "run started");
    Ok((StatusCode::CREATED, Json(shared.status())))
}

/// Engine loop for one run. Commands are applied between ticks; pacing waits
/// on the command channel so steering stays responsive.
fn drive(run: Arc<RunShared>, mut sim: Simulation, rx: mpsc::Receiver<Control>) {
    run.lifecycle.lock().unwrap().state = RunState::Live;
    let start = Instant::now();
    let mut aborted = false;
    let mut failure = None;
    let handle = |msg: Control, sim: &mut Simulation, aborted: &mut bool| match msg {
        Control::Command(kind, ack) => {
            let _ = ack.send(sim.apply_command(kind));
        }
        Control::Abort => *aborted = true,
    };
    while !sim.is_finished() && !aborted {
        while let Ok(msg) = rx.try_recv() {
            handle(msg, &mut sim, &mut aborted);
        }
        if aborted {
            break;
        }
        match sim.step() {
            Ok(out) => {
                run.next_tick.store(sim.tick(), Ordering::SeqCst);
                for f in tick_frames(&out) {
                    let _ = run.streams[f.stream.index()].send(Arc::new(f));
                }
            }
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        }
        if run.realtime_factor > 0.0 {
            let due = start + Duration::from_secs_f64(sim.time_of(sim.tick()) / run.realtime_factor);
            loop {
                let now = Instant::now();
                if now >= due || aborted {
                    break;
                }
                match rx.recv_timeout(due - now) {
                    Ok(msg) => handle(msg, &mut sim, &mut aborted),
                    Err(RecvTimeoutError::Timeout) => break,
                    Err(RecvTimeoutError::Disconnected) => break,
                }
            }
        }
    }

    let record = Arc::new(sim.finish());
    let persisted = record.persist(&run.dir).map_err(|e| e.to_string());
    let final_state = if aborted || failure.is_some() { RunState::Aborted } else { RunState::Finished };
    let error = failure.or(persisted.err());
    if let Some(e) = &error {
        tracing::warn!(run_id = %run.id, error = %e, "run ended with error");
    }
    let meta = json!({
        "schema_version": SCHEMA_VERSION,
        "run_id": run.id,
        "state": final_state,
        "config_hash": record.config_hash,
        "started_at_s": run.started_at_s,
        "n_ticks": record.n_ticks,
        "error": error,
    });
    let _ = std::fs::write(run.dir.join("run.json"), serde_json::to_string_pretty(&meta).expect("serializes"));

    // Lifecycle change and end-of-stream are atomic with respect to subscribe.
    let mut lc = run.lifecycle.lock().unwrap();
    lc.state = final_state;
    lc.error = error;
    lc.record = Some(record);
    for s in StreamKind::ALL {
        let _ = run.streams[s.index()].send(Arc::new(Frame::marker(s, FrameKind::End, json!({ "state": final_state }))));
    }
    tracing::info!(run_id = %run.id, state = ?final_state, "run ended");
}

async fn run_status(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    Ok(Json(lookup(&state, &id)?.status()))
}

async fn abort_run(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let run = lookup(&state, &id)?;
    if run.lifecycle.lock().unwrap().state.is_active() {
        let _ = run.control.lock().unwrap().send(Control::Abort);
    }
    Ok(Json(run.status()))
}

async fn control_jammer(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let run = lookup(&state, &id)?;
    let req: CommandRequest = parse_body(&body, "invalid_command")?;
    let live = run.lifecycle.lock().unwrap().state.is_active();
    if !live {
        return Err(engine_error(EngineError::NotLive));
    }
    let (tx, rx) = oneshot::channel();
    if run.control.lock().unwrap().send(Control::Command(req.command, tx)).is_err() {
        return Err(engine_error(EngineError::NotLive));
    }
    let tick = match tokio::time::timeout(ACK_TIMEOUT, rx).await {
        Ok(Ok(result)) => result.map_err(engine_error)?,
        // the run ended before reading the command
        Ok(Err(_)) => return Err(engine_error(EngineError::NotLive)),
        Err(_) => return Err(ApiError::new(StatusCode::GATEWAY_TIMEOUT, "timeout", "engine did not acknowledge")),
    };
    Ok(Json(json!({
        "schema_version": SCHEMA_VERSION,
        "run_id": id,
        "command": req.command,
        "effective_tick": tick,
        "effective_time_s": tick as f64 * run.tick_s,
    })))
}

async fn subscribe(
    State(state): State<AppState>,
    Path((id, stream)): Path<(String, String)>,
    ws: Result<WebSocketUpgrade, WebSocketUpgradeRejection>,
) -> Result<Response, ApiError> {
    let run = lookup(&state, &id)?;
    let kind = StreamKind::parse(&stream).ok_or_else(|| ApiError::not_found("stream"))?;
    let ws = match ws {
        Ok(ws) => ws,
        Err(rejection) => return Ok(rejection.into_response()),
    };
    // Decide replay vs live under the lifecycle lock so no end frame is missed.
    let source = {
        let lc = run.lifecycle.lock().unwrap();
        match &lc.record {
            Some(record) => Source::Replay(record.clone(), lc.state),
            None => Source::Live(run.streams[kind.index()].subscribe()),
        }
    };
    Ok(ws.on_upgrade(move |socket| pump(socket, kind, source)))
}

enum Source {
    Replay(Arc<RunRecord>, RunState),
    Live(broadcast::Receiver<Arc<Frame>>),
}

async fn send(socket: &mut WebSocket, frame: &Frame) -> bool {
    let text = serde_json::to_string(frame).expect("frame serializes");
    socket.send(Message::Text(text.into())).await.is_ok()
}

async fn pump(mut socket: WebSocket, kind: StreamKind, source: Source) {
    match source {
        Source::Replay(record, state) => {
            for f in record_frames(&record, kind) {
                if !send(&mut socket, &f).await {
                    return;
                }
            }
            send(&mut socket, &Frame::marker(kind, FrameKind::End, json!({ "state": state }))).await;
        }
        Source::Live(mut rx) => loop {
            match rx.recv().await {
                Ok(f) => {
                    if !send(&mut socket, &f).await || f.kind == FrameKind::End {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    if !send(&mut socket, &Frame::marker(kind, FrameKind::Gap, json!({ "missed": n }))).await {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Closed) => break,
            }
        },
    }
    let _ = socket.send(Message::Close(None)).await;
}

const RECORD_FILES: [&str; 7] = [
    "run.json",
    "config.json",
    "baseline.json",
    "metrics.csv",
    "spectrogram.bin",
    "jammer_log.jsonl",
    "commands.jsonl",
];

fn persisted(run: &RunShared) -> Result<(), ApiError> {
    if run.lifecycle.lock().unwrap().record.is_none() {
        return Err(ApiError::new(StatusCode::CONFLICT, "not_persisted", "run is still active"));
    }
    Ok(())
}

async fn record_manifest(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let run = lookup(&state, &id)?;
    persisted(&run)?;
    let files: Vec<Value> = RECORD_FILES
        .iter()
        .filter_map(|name| {
            let meta = std::fs::metadata(run.dir.join(name)).ok()?;
            Some(json!({ "name": name, "bytes": meta.len(), "href": format!("/runs/{id}/record/{name}") }))
        })
        .collect();
    Ok(Json(json!({ "schema_version": SCHEMA_VERSION, "run_id": id, "state": run.lifecycle.lock().unwrap().state, "files": files })))
}

async fn record_file(
    State(state): State<AppState>,
    Path((id, file)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let run = lookup(&state, &id)?;
    persisted(&run)?;
    let name = RECORD_FILES.iter().find(|n| **n == file).ok_or_else(|| ApiError::not_found("record file"))?;
    let bytes = std::fs::read(run.dir.join(name))
        .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, "not_found", e.to_string()))?;
    let mime = match name.rsplit('.').next() {
        Some("json") => "application/json",
        Some("csv") => "text/csv",
        Some("jsonl") => "application/x-ndjson",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

/// Bind and serve until the process ends.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    std::fs::create_dir_all(config.data_dir.join("runs"))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, data_dir = %config.data_dir.display(), "listening");
    axum::serve(listener, router(AppState::new(config))).await
}
