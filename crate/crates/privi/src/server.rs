//! JSON/PNG API behind the curation console. Reads run concurrently;
//! stage runs and retrains go through one writer lock, label posts are
//! independent appends. Every acknowledged change is already on disk.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use privi_core::curation::{DiscardReason, Frame, Snippet};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::experiments::{run_experiment, EXPERIMENT_STAGES};
use crate::frames::encode_png;
use crate::labels::{append_label, read_labels, LabelRecord};
use crate::pipeline::{Pipeline, RelevanceSummary, CURATION_STAGES};
use crate::workspace::{RunRecord, WorkspaceState};

pub const THUMBNAIL_SIDE: u32 = 128;
pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const MAX_PAGE_SIZE: usize = 1000;

pub struct AppState {
    pub pipeline: Arc<Pipeline>,
    writer: tokio::sync::Mutex<()>,
    running: std::sync::Mutex<Option<String>>,
    retraining: AtomicBool,
    labels: std::sync::Mutex<()>,
}

impl AppState {
    pub fn new(pipeline: Pipeline) -> Arc<Self> {
        Arc::new(Self {
            pipeline: Arc::new(pipeline),
            writer: tokio::sync::Mutex::new(()),
            running: std::sync::Mutex::new(None),
            retraining: AtomicBool::new(false),
            labels: std::sync::Mutex::new(()),
        })
    }
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            _ if e.is_provider() => StatusCode::BAD_GATEWAY,
            Error::MissingArtifact(_) => StatusCode::CONFLICT,
            Error::Core(_) | Error::Config(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Format { .. } | Error::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> crate::Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
        .map_err(ApiError::from)
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/frames/next", get(next_frame))
        .route("/api/labels", post(post_label).get(get_labels))
        .route("/api/relevance/train", post(train_relevance))
        .route("/api/relevance/curve", get(relevance_curve))
        .route("/api/config/threshold", put(put_threshold).get(get_threshold))
        .route("/api/snippets", get(list_snippets))
        .route("/api/snippets/{id}/keyframe", get(snippet_keyframe))
        .route("/api/snippets/{id}/thumbnail", get(snippet_thumbnail))
        .route("/api/pipeline/{stage}/run", post(run_stage))
        .route("/api/pipeline/status", get(status))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| Error::io(addr.to_string(), e))?;
    eprintln!("listening on http://{}", listener.local_addr().map_err(|e| Error::io(addr.to_string(), e))?);
    axum::serve(listener, router(state)).await.map_err(|e| Error::io(addr.to_string(), e))
}

fn current_snippets(p: &Pipeline) -> crate::Result<(String, Vec<Snippet>)> {
    p.latest_manifest()?.ok_or_else(|| Error::MissingArtifact("snippet manifest (run `chunk` first)".into()))
}

fn snippet_frame(p: &Pipeline, id: &str) -> ApiResult<Frame> {
    let snippet = current_snippets(p)?
        .1
        .into_iter()
        .find(|s| s.snippet_id == id)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown snippet '{id}'")))?;
    Ok(p.catalog()?.keyframe(&snippet)?.frame)
}

fn png_response(frame: &Frame, extra: HeaderMap) -> Response {
    let mut headers = extra;
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    (StatusCode::OK, headers, encode_png(frame)).into_response()
}

/// Nearest-neighbour downscale so the longer side is at most `side`.
pub fn thumbnail(frame: &Frame, side: u32) -> Frame {
    let longest = frame.width.max(frame.height);
    if longest <= side {
        return frame.clone();
    }
    let w = (frame.width as u64 * side as u64 / longest as u64).max(1) as u32;
    let h = (frame.height as u64 * side as u64 / longest as u64).max(1) as u32;
    let mut rgb = Vec::with_capacity((w * h * 3) as usize);
    for y in 0..h {
        let sy = (y as u64 * frame.height as u64 / h as u64) as usize;
        for x in 0..w {
            let sx = (x as u64 * frame.width as u64 / w as u64) as usize;
            let i = (sy * frame.width as usize + sx) * 3;
            rgb.extend_from_slice(&frame.rgb[i..i + 3]);
        }
    }
    Frame { width: w, height: h, rgb }
}

#[derive(Debug, Default, Deserialize)]
struct NextQuery {
    annotator: Option<String>,
}

fn header_value(s: &str) -> HeaderValue {
    HeaderValue::from_str(s).unwrap_or_else(|_| HeaderValue::from_static("?"))
}

async fn next_frame(State(st): State<Arc<AppState>>, Query(q): Query<NextQuery>) -> ApiResult<Response> {
    let p = st.pipeline.clone();
    blocking(move || {
        let (_, snippets) = current_snippets(&p)?;
        let labeled: BTreeSet<String> = read_labels(&p.ws)?
            .into_iter()
            .filter(|r| q.annotator.as_ref().is_none_or(|a| *a == r.annotator))
            .map(|r| r.keyframe_ref)
            .collect();
        let mut open = snippets.iter().filter(|s| !labeled.contains(&s.snippet_id));
        let Some(s) = open.next() else { return Ok(StatusCode::NO_CONTENT.into_response()) };
        let remaining = open.count();
        let kf = p.catalog()?.keyframe(s)?;
        let mut h = HeaderMap::new();
        h.insert("x-keyframe-ref", header_value(&s.snippet_id));
        h.insert("x-video-ref", header_value(&s.video_ref));
        h.insert("x-source-id", header_value(&s.source_id));
        h.insert("x-keyframe-time-s", header_value(&s.keyframe_time_s.to_string()));
        h.insert("x-remaining", header_value(&remaining.to_string()));
        Ok(png_response(&kf.frame, h))
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelAck {
    pub keyframe_ref: String,
    pub total_labels: usize,
}

async fn post_label(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<LabelAck>)> {
    let record: LabelRecord = serde_json::from_slice(&body)
        .map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, format!("invalid label record: {e}")))?;
    record.validate().map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, format!("invalid label record: {e}")))?;
    let p = st.pipeline.clone();
    let ack = tokio::task::spawn_blocking(move || -> ApiResult<LabelAck> {
        let (_, snippets) = current_snippets(&p)?;
        if !snippets.iter().any(|s| s.snippet_id == record.keyframe_ref) {
            return Err(ApiError(StatusCode::UNPROCESSABLE_ENTITY, format!("unknown keyframe_ref '{}'", record.keyframe_ref)));
        }
        let _guard = st.labels.lock().unwrap_or_else(|e| e.into_inner());
        append_label(&p.ws, &record)?;
        Ok(LabelAck { keyframe_ref: record.keyframe_ref, total_labels: read_labels(&p.ws)?.len() })
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok((StatusCode::CREATED, Json(ack)))
}

async fn get_labels(State(st): State<Arc<AppState>>) -> ApiResult<Json<Vec<LabelRecord>>> {
    let p = st.pipeline.clone();
    Ok(Json(blocking(move || read_labels(&p.ws)).await?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainResponse {
    pub run: RunRecord,
    pub summary: RelevanceSummary,
    /// Threshold the next filter run applies.
    pub threshold: f64,
}

struct RetrainFlag<'a>(&'a AtomicBool);

impl Drop for RetrainFlag<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

struct Running<'a>(&'a AppState);

impl<'a> Running<'a> {
    fn set(st: &'a AppState, stage: &str) -> Self {
        *st.running.lock().unwrap_or_else(|e| e.into_inner()) = Some(stage.to_string());
        Running(st)
    }
}

impl Drop for Running<'_> {
    fn drop(&mut self) {
        *self.0.running.lock().unwrap_or_else(|e| e.into_inner()) = None;
    }
}

async fn train_relevance(State(st): State<Arc<AppState>>) -> ApiResult<Json<TrainResponse>> {
    if st.retraining.compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst).is_err() {
        return Err(ApiError(StatusCode::CONFLICT, "a relevance retrain is already running".into()));
    }
    let _flag = RetrainFlag(&st.retraining);
    let _writer = st.writer.lock().await;
    let _running = Running::set(&st, "train-relevance");
    let p = st.pipeline.clone();
    let out = blocking(move || {
        let run = p.run_stage("train-relevance")?;
        let summary = p.relevance_summary()?;
        let threshold = p.effective_threshold()?.unwrap_or(summary.auto_threshold);
        Ok(TrainResponse { run, summary, threshold })
    })
    .await;
    Ok(Json(out?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CurveResponse {
    pub pr: Vec<privi_core::metrics::PrPoint>,
    pub roc: Vec<privi_core::metrics::RocPoint>,
    pub roc_auc: f64,
    pub val_scores: Vec<f64>,
    pub val_labels: Vec<bool>,
    pub auto_threshold: f64,
    pub min_precision: f64,
    pub threshold: f64,
    /// Relevance score of every embedded snippet, for kept-count previews.
    pub snippet_scores: BTreeMap<String, f64>,
}

async fn relevance_curve(State(st): State<Arc<AppState>>) -> ApiResult<Json<CurveResponse>> {
    let p = st.pipeline.clone();
    Ok(Json(
        blocking(move || {
            let s = p.relevance_summary()?;
            Ok(CurveResponse {
                threshold: p.effective_threshold()?.unwrap_or(s.auto_threshold),
                snippet_scores: p.relevance_scores()?,
                pr: s.report.pr_curve,
                roc: s.report.roc_curve,
                roc_auc: s.report.roc_auc,
                val_scores: s.report.val_scores,
                val_labels: s.report.val_labels,
                auto_threshold: s.auto_threshold,
                min_precision: s.min_precision,
            })
        })
        .await?,
    ))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ThresholdBody {
    pub value: Option<f64>,
}

async fn put_threshold(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<ThresholdBody>> {
    let t: ThresholdBody =
        serde_json::from_slice(&body).map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, format!("invalid threshold body: {e}")))?;
    if let Some(v) = t.value {
        if !(0.0..=1.0).contains(&v) {
            return Err(ApiError(StatusCode::UNPROCESSABLE_ENTITY, format!("threshold {v} outside [0, 1]")));
        }
    }
    let _writer = st.writer.lock().await;
    let p = st.pipeline.clone();
    blocking(move || p.ws.set_state(&WorkspaceState { threshold: t.value })).await?;
    Ok(Json(t))
}

async fn get_threshold(State(st): State<Arc<AppState>>) -> ApiResult<Json<ThresholdBody>> {
    let p = st.pipeline.clone();
    Ok(Json(ThresholdBody { value: blocking(move || p.effective_threshold()).await? }))
}

#[derive(Debug, Default, Deserialize)]
struct SnippetQuery {
    kept: Option<bool>,
    reason: Option<DiscardReason>,
    source: Option<String>,
    #[serde(default)]
    page: usize,
    page_size: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SnippetItem {
    #[serde(flatten)]
    pub snippet: Snippet,
    pub thumbnail_url: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SnippetPage {
    pub stage: String,
    pub total: usize,
    pub page: usize,
    pub page_size: usize,
    pub items: Vec<SnippetItem>,
}

async fn list_snippets(State(st): State<Arc<AppState>>, Query(q): Query<SnippetQuery>) -> ApiResult<Json<SnippetPage>> {
    let page_size = q.page_size.unwrap_or(DEFAULT_PAGE_SIZE);
    if page_size == 0 || page_size > MAX_PAGE_SIZE {
        return Err(ApiError(StatusCode::UNPROCESSABLE_ENTITY, format!("page_size must lie in 1..={MAX_PAGE_SIZE}")));
    }
    let p = st.pipeline.clone();
    Ok(Json(
        blocking(move || {
            let (stage, snippets) = current_snippets(&p)?;
            let matching: Vec<Snippet> = snippets
                .into_iter()
                .filter(|s| q.kept.is_none_or(|k| s.kept == k))
                .filter(|s| q.reason.is_none_or(|r| s.discard_reason == Some(r)))
                .filter(|s| q.source.as_ref().is_none_or(|src| s.source_id == *src))
                .collect();
            let total = matching.len();
            let items = matching
                .into_iter()
                .skip(q.page.saturating_mul(page_size))
                .take(page_size)
                .map(|s| SnippetItem { thumbnail_url: format!("/api/snippets/{}/thumbnail", s.snippet_id), snippet: s })
                .collect();
            Ok(SnippetPage { stage, total, page: q.page, page_size, items })
        })
        .await?,
    ))
}

async fn snippet_keyframe(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let p = st.pipeline.clone();
    let frame = tokio::task::spawn_blocking(move || snippet_frame(&p, &id))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(png_response(&frame, HeaderMap::new()))
}

async fn snippet_thumbnail(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let p = st.pipeline.clone();
    let frame = tokio::task::spawn_blocking(move || snippet_frame(&p, &id))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(png_response(&thumbnail(&frame, THUMBNAIL_SIDE), HeaderMap::new()))
}

async fn run_stage(State(st): State<Arc<AppState>>, Path(stage): Path<String>) -> ApiResult<Json<RunRecord>> {
    let known = CURATION_STAGES.contains(&stage.as_str()) || EXPERIMENT_STAGES.contains(&stage.as_str());
    if !known {
        return Err(ApiError(StatusCode::NOT_FOUND, format!("unknown stage '{stage}'")));
    }
    if stage == "train-relevance" && st.retraining.load(Ordering::SeqCst) {
        return Err(ApiError(StatusCode::CONFLICT, "a relevance retrain is already running".into()));
    }
    let _writer = st.writer.lock().await;
    let _running = Running::set(&st, &stage);
    let p = st.pipeline.clone();
    let out = blocking(move || {
        if CURATION_STAGES.contains(&stage.as_str()) {
            p.run_stage(&stage)
        } else {
            run_experiment(&p, &stage, None)
        }
    })
    .await;
    Ok(Json(out?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: String,
    pub completed: bool,
    /// Recorded with the config currently loaded.
    pub current_config: bool,
    pub outputs: BTreeMap<String, String>,
    pub last_run: Option<RunRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StatusResponse {
    pub config_hash: String,
    pub running: Option<String>,
    pub retraining: bool,
    pub labels: usize,
    pub threshold_override: Option<f64>,
    pub stages: Vec<StageStatus>,
}

async fn status(State(st): State<Arc<AppState>>) -> ApiResult<Json<StatusResponse>> {
    let running = st.running.lock().unwrap_or_else(|e| e.into_inner()).clone();
    let retraining = st.retraining.load(Ordering::SeqCst);
    let p = st.pipeline.clone();
    Ok(Json(
        blocking(move || {
            let config_hash = p.config.hash();
            let runs = p.ws.runs()?;
            let mut stages = Vec::new();
            for stage in CURATION_STAGES.iter().chain(EXPERIMENT_STAGES) {
                let rec = p.ws.stage_record(stage)?;
                stages.push(StageStatus {
                    stage: stage.to_string(),
                    completed: rec.is_some(),
                    current_config: rec.as_ref().is_some_and(|r| r.config_hash == config_hash),
                    outputs: rec.map(|r| r.outputs).unwrap_or_default(),
                    last_run: runs.iter().rev().find(|r| r.stage == *stage).cloned(),
                });
            }
            Ok(StatusResponse {
                config_hash,
                running,
                retraining,
                labels: read_labels(&p.ws)?.len(),
                threshold_override: p.ws.state()?.threshold,
                stages,
            })
        })
        .await?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thumbnails_keep_aspect() {
        let f = Frame { width: 400, height: 200, rgb: (0..400 * 200 * 3).map(|i| (i % 251) as u8).collect() };
        let t = thumbnail(&f, 128);
        assert_eq!((t.width, t.height), (128, 64));
        assert_eq!(&t.rgb[..3], &f.rgb[..3]);
        let small = Frame { width: 16, height: 12, rgb: vec![7; 16 * 12 * 3] };
        assert_eq!(thumbnail(&small, 128), small);
    }

    #[test]
    fn concurrent_retrain_is_rejected() {
        use crate::fixtures::{label_from_truth, write_corpus, FixtureSpec, CONFIG_FILE};
        let dir = tempfile::tempdir().unwrap();
        let truth = write_corpus(dir.path(), &FixtureSpec { videos: 20, ..FixtureSpec::default() }).unwrap();
        let ws = dir.path().join("ws");
        let p = crate::pipeline::open_pipeline(&dir.path().join(CONFIG_FILE), Some(&ws), None, Some(1)).unwrap();
        for stage in ["cuts", "chunk", "embed", "detect"] {
            p.run_stage(stage).unwrap();
        }
        label_from_truth(&p.ws, &p.stage_manifest("chunk").unwrap(), &truth, 40, 0).unwrap();
        let st = AppState::new(p);
        let (tx, rx) = std::sync::mpsc::channel();
        let app = router(st.clone());
        std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                tx.send(listener.local_addr().unwrap()).unwrap();
                axum::serve(listener, app).await.unwrap();
            });
        });
        let base = format!("http://{}", rx.recv().unwrap());
        let status = |r: Result<ureq::Response, ureq::Error>| match r {
            Ok(r) => r.status(),
            Err(ureq::Error::Status(c, _)) => c,
            Err(e) => panic!("{e}"),
        };

        let held = st.writer.blocking_lock();
        let url = format!("{base}/api/relevance/train");
        let first = std::thread::spawn(move || status(ureq::post(&url).call()));
        while !st.retraining.load(Ordering::SeqCst) {
            std::thread::sleep(std::time::Duration::from_millis(2));
        }
        assert_eq!(status(ureq::post(&format!("{base}/api/relevance/train")).call()), 409);
        assert_eq!(status(ureq::post(&format!("{base}/api/pipeline/train-relevance/run")).call()), 409);
        let s: StatusResponse = ureq::get(&format!("{base}/api/pipeline/status")).call().unwrap().into_json().unwrap();
        assert!(s.retraining);
        drop(held);
        assert_eq!(first.join().unwrap(), 200);
        assert!(!st.retraining.load(Ordering::SeqCst));
        assert_eq!(status(ureq::post(&format!("{base}/api/relevance/train")).call()), 200);
    }
}
