//! The `serve` command: a JSON API over a finished run directory.

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use mobilicities::analysis::{component_map, label_association, user_component_sample};
use mobilicities::factorize::{
    nmf, normalize_components, read_factorization, rss, write_factorization, Factorization, NmfConfig, SpectrumRss,
};
use mobilicities::geo::{display_label, infrastructure_geojson, TowerLabel};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::mpsc;

use crate::config::Settings;
use crate::error::{CliError, CliResult, StageExt};
use crate::pipeline::{load_run, read_rss_curve, RssPoint, RunData, MANIFEST, RSS_CURVE_FILE};

pub const NAMES_FILE: &str = "component_names.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct Job {
    pub id: u64,
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub status: JobStatus,
    pub error: Option<String>,
    pub result: Option<Value>,
}

struct JobRequest {
    id: u64,
    k: usize,
    seed: u64,
    restarts: usize,
}

type Names = BTreeMap<usize, BTreeMap<usize, String>>;

pub struct AppState {
    dir: PathBuf,
    manifest: Value,
    settings: Settings,
    data: RunData,
    spectrum: SpectrumRss,
    allow_compute: bool,
    cache: RwLock<BTreeMap<usize, Arc<Factorization>>>,
    jobs: Mutex<BTreeMap<u64, Job>>,
    next_job: AtomicU64,
    queue: mpsc::UnboundedSender<JobRequest>,
    names: Mutex<Names>,
    job_points: Mutex<BTreeMap<usize, RssPoint>>,
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({ "error": msg.into() }))).into_response()
}

fn cached_factorizations(dir: &Path) -> CliResult<BTreeMap<usize, Arc<Factorization>>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).stage("input")? {
        let entry = entry.stage("input")?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(k) = name.strip_prefix("factorization_k").and_then(|s| s.parse::<usize>().ok()) else {
            continue;
        };
        let (f, _, _, _) = read_factorization(&entry.path()).stage("input")?;
        out.insert(k, Arc::new(f));
    }
    Ok(out)
}

/// Builds the router for the run in `dir` and starts the job worker. Must
/// be called inside a Tokio runtime.
pub fn app(dir: &Path, allow_compute: bool) -> CliResult<Router> {
    let manifest: Value = serde_json::from_slice(&fs::read(dir.join(MANIFEST)).map_err(|e| {
        CliError::config("serve", format!("{}: {e}", dir.join(MANIFEST).display()))
    })?)
    .stage("serve")?;
    let (run, data) = load_run(dir)?;
    let names: Names = match fs::read(dir.join(NAMES_FILE)) {
        Ok(bytes) => serde_json::from_slice(&bytes).stage("serve")?,
        Err(_) => Names::new(),
    };
    let (tx, rx) = mpsc::unbounded_channel();
    let state = Arc::new(AppState {
        dir: dir.to_path_buf(),
        manifest,
        settings: run.config,
        spectrum: SpectrumRss::new(data.waypoints.matrix()),
        data,
        allow_compute,
        cache: RwLock::new(cached_factorizations(dir)?),
        jobs: Mutex::new(BTreeMap::new()),
        next_job: AtomicU64::new(1),
        queue: tx,
        names: Mutex::new(names),
        job_points: Mutex::new(BTreeMap::new()),
    });
    tokio::spawn(worker(state.clone(), rx));
    Ok(Router::new()
        .route("/api/run", get(get_run))
        .route("/api/towers", get(get_towers))
        .route("/api/components", get(get_components))
        .route("/api/components/{k}/{c}/name", put(put_name))
        .route("/api/factorize", post(post_factorize))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/rss-curve", get(get_rss_curve))
        .route("/api/label-association", get(get_association))
        .route("/api/heatmap", get(get_heatmap))
        .with_state(state))
}

pub async fn serve(dir: &Path, addr: SocketAddr, allow_compute: bool) -> CliResult<()> {
    let router = app(dir, allow_compute)?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::config("serve", format!("cannot bind {addr}: {e}")))?;
    eprintln!("serving {} on http://{addr}", dir.display());
    axum::serve(listener, router).await.stage("serve")
}

fn factorize(state: &AppState, k: usize, seed: u64, restarts: usize) -> mobilicities::Result<Factorization> {
    let cfg = NmfConfig { max_iter: state.settings.max_iter, tol: state.settings.tol, ..NmfConfig::new(k) }
        .seed(seed)
        .restarts(restarts);
    Ok(normalize_components(&nmf(state.data.waypoints.matrix(), &cfg)?))
}

async fn worker(state: Arc<AppState>, mut rx: mpsc::UnboundedReceiver<JobRequest>) {
    while let Some(req) = rx.recv().await {
        set_status(&state, req.id, JobStatus::Running, None, None);
        let st = state.clone();
        let outcome = tokio::task::spawn_blocking(move || run_job(&st, &req).map(|v| (req.id, v))).await;
        match outcome {
            Ok(Ok((id, result))) => set_status(&state, id, JobStatus::Done, None, Some(result)),
            Ok(Err((id, e))) => set_status(&state, id, JobStatus::Failed, Some(e), None),
            Err(e) => {
                let running: Vec<u64> = state
                    .jobs
                    .lock()
                    .expect("jobs lock")
                    .values()
                    .filter(|j| j.status == JobStatus::Running)
                    .map(|j| j.id)
                    .collect();
                for id in running {
                    set_status(&state, id, JobStatus::Failed, Some(e.to_string()), None);
                }
            }
        }
    }
}

fn run_job(state: &AppState, req: &JobRequest) -> Result<Value, (u64, String)> {
    let fail = |e: String| (req.id, e);
    let f = factorize(state, req.k, req.seed, req.restarts).map_err(|e| fail(e.to_string()))?;
    let wp = &state.data.waypoints;
    let dir = state.dir.join("jobs").join(format!("job_{}_k{}", req.id, req.k));
    write_factorization(&dir, &f, wp.rows(), wp.cols(), Some(&state.data.waypoints_digest))
        .map_err(|e| fail(e.to_string()))?;
    let point = RssPoint {
        k: req.k,
        nmf_rss: rss(wp.matrix(), &f.u, &f.t).map_err(|e| fail(e.to_string()))?,
        svd_rss: state.spectrum.rss(req.k),
    };
    state.job_points.lock().expect("rss lock").insert(req.k, point);
    let result = json!({
        "k": req.k,
        "final_objective": f.final_objective(),
        "iterations": f.iterations_run,
        "converged": f.converged,
        "nmf_rss": point.nmf_rss,
        "svd_rss": point.svd_rss,
        "output_dir": dir.strip_prefix(&state.dir).unwrap_or(&dir),
    });
    state.cache.write().expect("cache lock").insert(req.k, Arc::new(f));
    Ok(result)
}

fn set_status(state: &AppState, id: u64, status: JobStatus, error: Option<String>, result: Option<Value>) {
    if let Some(job) = state.jobs.lock().expect("jobs lock").get_mut(&id) {
        job.status = status;
        job.error = error;
        job.result = result;
    }
}

async fn get_run(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(state.manifest.clone())
}

async fn get_towers(State(state): State<Arc<AppState>>) -> Json<Value> {
    let towers: Vec<Value> = state
        .data
        .registry
        .towers()
        .iter()
        .map(|t| {
            let labels = &state.data.labels[&t.id];
            json!({
                "tower_id": t.id,
                "name": t.name,
                "lat": t.location.lat(),
                "lon": t.location.lon(),
                "indoor": t.indoor,
                "underground_metro": t.underground_metro,
                "usable": t.is_usable(),
                "labels": labels.iter().map(TowerLabel::as_str).collect::<Vec<_>>(),
                "display_label": display_label(labels).as_str(),
            })
        })
        .collect();
    Json(json!({ "towers": towers, "infrastructure": infrastructure_geojson(&state.data.infrastructure) }))
}

/// The factorization at `k`: cached, or computed now when allowed.
async fn factorization_at(state: &Arc<AppState>, k: usize) -> Result<Arc<Factorization>, Response> {
    if let Some(f) = state.cache.read().expect("cache lock").get(&k) {
        return Ok(f.clone());
    }
    if !state.allow_compute {
        return Err(error(StatusCode::NOT_FOUND, format!("no factorization for k = {k}; POST /api/factorize to compute one")));
    }
    let st = state.clone();
    let (seed, restarts) = (state.settings.seed, state.settings.restarts);
    let f = tokio::task::spawn_blocking(move || factorize(&st, k, seed, restarts))
        .await
        .map_err(|e| error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| error(StatusCode::BAD_REQUEST, e.to_string()))?;
    let f = Arc::new(f);
    state.cache.write().expect("cache lock").insert(k, f.clone());
    Ok(f)
}

#[derive(Debug, Deserialize)]
struct KQuery {
    k: usize,
}

async fn get_components(State(state): State<Arc<AppState>>, Query(q): Query<KQuery>) -> Response {
    let f = match factorization_at(&state, q.k).await {
        Ok(f) => f,
        Err(r) => return r,
    };
    let towers = state.data.column_towers();
    let names = state.names.lock().expect("names lock").get(&q.k).cloned().unwrap_or_default();
    let mut components = Vec::with_capacity(f.k);
    for c in 0..f.k {
        match component_map(&f, &towers, c, names.get(&c).cloned()) {
            Ok(m) => components.push(m.to_geojson()),
            Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
    Json(json!({ "k": q.k, "components": components })).into_response()
}

async fn get_association(State(state): State<Arc<AppState>>, Query(q): Query<KQuery>) -> Response {
    let f = match factorization_at(&state, q.k).await {
        Ok(f) => f,
        Err(r) => return r,
    };
    match label_association(&f, &state.data.column_labels(), state.settings.positive_only) {
        Ok(table) => Json(table).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

#[derive(Debug, Deserialize)]
struct HeatmapQuery {
    k: usize,
    n: Option<usize>,
    seed: Option<u64>,
}

async fn get_heatmap(State(state): State<Arc<AppState>>, Query(q): Query<HeatmapQuery>) -> Response {
    let f = match factorization_at(&state, q.k).await {
        Ok(f) => f,
        Err(r) => return r,
    };
    let n = q.n.unwrap_or(state.settings.heatmap_n);
    let seed = q.seed.unwrap_or(state.settings.seed);
    let sample = user_component_sample(&f, n, seed);
    let rows = state.data.waypoints.rows();
    let users: Vec<&str> = sample.users.iter().map(|&i| rows[i].as_str()).collect();
    Json(json!({ "k": q.k, "seed": seed, "users": users, "dominant": sample.dominant, "rows": sample.rows }))
        .into_response()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FactorizeBody {
    k: usize,
    seed: Option<u64>,
    restarts: Option<usize>,
}

async fn post_factorize(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let body: FactorizeBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed body: {e}")),
    };
    let wp = state.data.waypoints.matrix();
    let max_k = wp.nrows().min(wp.ncols());
    if body.k == 0 || body.k > max_k {
        return error(StatusCode::BAD_REQUEST, format!("k must be in 1..={max_k}"));
    }
    let restarts = body.restarts.unwrap_or(state.settings.restarts);
    if restarts == 0 {
        return error(StatusCode::BAD_REQUEST, "restarts must be positive");
    }
    let id = state.next_job.fetch_add(1, Ordering::SeqCst);
    let seed = body.seed.unwrap_or(state.settings.seed);
    let job = Job { id, k: body.k, seed, restarts, status: JobStatus::Queued, error: None, result: None };
    state.jobs.lock().expect("jobs lock").insert(id, job.clone());
    if state.queue.send(JobRequest { id, k: body.k, seed, restarts }).is_err() {
        set_status(&state, id, JobStatus::Failed, Some("job worker stopped".into()), None);
    }
    (StatusCode::ACCEPTED, Json(json!({ "job_id": id, "status": JobStatus::Queued }))).into_response()
}

async fn get_job(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<u64>) -> Response {
    match state.jobs.lock().expect("jobs lock").get(&id) {
        Some(job) => Json(job.clone()).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("no job {id}")),
    }
}

async fn get_rss_curve(State(state): State<Arc<AppState>>) -> Response {
    let mut curve: BTreeMap<usize, RssPoint> = match read_rss_curve(&state.dir.join(RSS_CURVE_FILE)) {
        Ok(points) => points.into_iter().map(|p| (p.k, p)).collect(),
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    curve.extend(state.job_points.lock().expect("rss lock").iter().map(|(k, p)| (*k, *p)));
    Json(json!({ "points": curve.into_values().collect::<Vec<_>>() })).into_response()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NameBody {
    name: String,
}

async fn put_name(State(state): State<Arc<AppState>>, UrlPath((k, c)): UrlPath<(usize, usize)>, body: Bytes) -> Response {
    let body: NameBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed body: {e}")),
    };
    let known = state.cache.read().expect("cache lock").get(&k).map(|f| f.k);
    match known {
        None => return error(StatusCode::NOT_FOUND, format!("no factorization for k = {k}")),
        Some(k) if c >= k => return error(StatusCode::NOT_FOUND, format!("component {c} out of range for k = {k}")),
        Some(_) => {}
    }
    let mut names = state.names.lock().expect("names lock");
    names.entry(k).or_default().insert(c, body.name.clone());
    let written = serde_json::to_vec_pretty(&*names)
        .map_err(|e| e.to_string())
        .and_then(|bytes| fs::write(state.dir.join(NAMES_FILE), bytes).map_err(|e| e.to_string()));
    if let Err(e) = written {
        return error(StatusCode::INTERNAL_SERVER_ERROR, e);
    }
    Json(json!({ "k": k, "component": c, "name": body.name })).into_response()
}
