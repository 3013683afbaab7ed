use std::collections::BTreeSet;
use std::path::Path;

use privi::fixtures::{read_truth, write_corpus, FixtureSpec, CONFIG_FILE};
use privi::frames::decode_png;
use privi::labels::{append_label, read_labels};
use privi::pipeline::open_pipeline;
use privi::server::{router, AppState, CurveResponse, LabelAck, SnippetPage, StatusResponse, TrainResponse};
use privi::workspace::{RunRecord, WorkspaceState};
use serde_json::{json, Value};

struct Reply {
    status: u16,
    body: Vec<u8>,
    headers: Vec<(String, String)>,
}

impl Reply {
    fn json<T: serde::de::DeserializeOwned>(&self) -> T {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }

    fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }
}

struct Api {
    base: String,
}

impl Api {
    fn start(config: &Path, ws: &Path) -> Self {
        let pipeline = open_pipeline(config, Some(ws), None, Some(2)).unwrap();
        let state = AppState::new(pipeline);
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                tx.send(listener.local_addr().unwrap()).unwrap();
                axum::serve(listener, router(state)).await.unwrap();
            });
        });
        Api { base: format!("http://{}", rx.recv().unwrap()) }
    }

    fn send(&self, method: &str, path: &str, body: Option<&[u8]>) -> Reply {
        let req = ureq::request(method, &format!("{}{path}", self.base));
        let result = match body {
            Some(b) => req.set("content-type", "application/json").send_bytes(b),
            None => req.call(),
        };
        let resp = match result {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(e) => panic!("{method} {path}: {e}"),
        };
        let status = resp.status();
        let headers = resp.headers_names().into_iter().map(|n| (n.clone(), resp.header(&n).unwrap_or("").to_string())).collect();
        let mut body = Vec::new();
        std::io::Read::read_to_end(&mut resp.into_reader(), &mut body).unwrap();
        Reply { status, body, headers }
    }

    fn get(&self, path: &str) -> Reply {
        self.send("GET", path, None)
    }

    fn post(&self, path: &str, body: &Value) -> Reply {
        self.send("POST", path, Some(&serde_json::to_vec(body).unwrap()))
    }

    fn run(&self, stage: &str) -> RunRecord {
        let r = self.send("POST", &format!("/api/pipeline/{stage}/run"), None);
        assert_eq!(r.status, 200, "{stage}: {}", String::from_utf8_lossy(&r.body));
        r.json()
    }
}

fn label(keyframe_ref: &str, relevant: bool) -> Value {
    json!({
        "keyframe_ref": keyframe_ref,
        "verdict": if relevant { "relevant" } else { "irrelevant" },
        "annotator": "tester",
        "timestamp": "2024-05-01T12:00:00Z",
        "criteria": {"primate_prominent": relevant, "real_world": true}
    })
}

#[test]
fn console_workflow() {
    let fixture = tempfile::tempdir().unwrap();
    let truth = write_corpus(fixture.path(), &FixtureSpec { videos: 60, ..FixtureSpec::default() }).unwrap();
    let relevant = |snippet_id: &str| truth.iter().find(|v| snippet_id.starts_with(&format!("{}@", v.video_ref))).unwrap().relevant();
    let config = fixture.path().join(CONFIG_FILE);
    let ws = tempfile::tempdir().unwrap();
    let api = Api::start(&config, ws.path());

    assert_eq!(api.send("POST", "/api/pipeline/nonsense/run", None).status, 404);
    assert_eq!(api.get("/api/relevance/curve").status, 409);
    assert_eq!(api.send("POST", "/api/pipeline/eval/run", None).status, 422);
    for stage in ["cuts", "chunk", "embed", "detect"] {
        api.run(stage);
    }

    // Annotate 50 keyframes the way the console does.
    let mut remaining = None;
    for i in 0..50 {
        let r = api.get("/api/frames/next");
        assert_eq!(r.status, 200);
        assert_eq!(r.header("content-type"), Some("image/png"));
        let frame = decode_png(&r.body).unwrap();
        assert_eq!((frame.width, frame.height), (16, 12));
        let left: usize = r.header("x-remaining").unwrap().parse().unwrap();
        if let Some(prev) = remaining {
            assert_eq!(left + 1, prev);
        }
        remaining = Some(left);
        let id = r.header("x-keyframe-ref").unwrap().to_string();
        assert!(id.starts_with(r.header("x-video-ref").unwrap()));
        let ack = api.post("/api/labels", &label(&id, relevant(&id)));
        assert_eq!(ack.status, 201);
        let ack: LabelAck = ack.json();
        assert_eq!((ack.keyframe_ref.as_str(), ack.total_labels), (id.as_str(), i + 1));
    }

    // Invalid labels.
    assert_eq!(api.send("POST", "/api/labels", Some(b"{not json")).status, 422);
    assert_eq!(api.post("/api/labels", &json!({"keyframe_ref": "v000@0", "verdict": "maybe", "annotator": "a", "timestamp": "t"})).status, 422);
    assert_eq!(api.post("/api/labels", &label("v999@0", true)).status, 422);
    assert_eq!(api.post("/api/labels", &json!({"keyframe_ref": "v000@0", "verdict": "relevant", "annotator": " ", "timestamp": "t"})).status, 422);
    assert_eq!(api.get("/api/labels").json::<Vec<Value>>().len(), 50);

    let trained = api.send("POST", "/api/relevance/train", None);
    assert_eq!(trained.status, 200, "{}", String::from_utf8_lossy(&trained.body));
    let trained: TrainResponse = trained.json();
    assert!(trained.summary.report.roc_auc.is_finite());
    assert!(!trained.summary.report.pr_curve.is_empty());
    assert_eq!(trained.summary.n_labels, 50);
    let curve: CurveResponse = api.get("/api/relevance/curve").json();
    assert!(curve.roc_auc.is_finite() && !curve.pr.is_empty() && !curve.roc.is_empty());
    assert_eq!(curve.threshold, curve.auto_threshold);
    assert_eq!(curve.val_scores.len(), curve.val_labels.len());
    assert!(curve.snippet_scores.values().all(|s| (0.0..=1.0).contains(s)));

    // Threshold override, then filter; must equal the offline run at the same threshold.
    assert_eq!(api.send("PUT", "/api/config/threshold", Some(br#"{"value": 1.5}"#)).status, 422);
    assert_eq!(api.send("PUT", "/api/config/threshold", Some(b"nope")).status, 422);
    assert_eq!(api.send("PUT", "/api/config/threshold", Some(br#"{"value": 0.7}"#)).status, 200);
    assert_eq!(api.get("/api/config/threshold").json::<Value>()["value"], 0.7);
    let filtered = api.run("filter");
    let offline_ws = tempfile::tempdir().unwrap();
    let offline = open_pipeline(&config, Some(offline_ws.path()), None, Some(1)).unwrap();
    for stage in ["cuts", "chunk", "embed", "detect"] {
        offline.run_stage(stage).unwrap();
    }
    for r in read_labels(&open_pipeline(&config, Some(ws.path()), None, None).unwrap().ws).unwrap() {
        append_label(&offline.ws, &r).unwrap();
    }
    offline.run_stage("train-relevance").unwrap();
    offline.ws.set_state(&WorkspaceState { threshold: Some(0.7) }).unwrap();
    assert_eq!(offline.run_stage("filter").unwrap().output_hashes, filtered.output_hashes);
    let kept_preview = curve.snippet_scores.values().filter(|&&s| s >= 0.7).count();
    let kept_or_later: usize = offline
        .stage_manifest("filter")
        .unwrap()
        .iter()
        .filter(|s| s.relevance_score.is_some_and(|x| x >= 0.7))
        .count();
    assert_eq!(kept_preview, kept_or_later);

    // Pagination visits every snippet of the current manifest exactly once.
    let first: SnippetPage = api.get("/api/snippets?page_size=7").json();
    assert_eq!(first.stage, "filter");
    let mut seen = BTreeSet::new();
    for page in 0..first.total.div_ceil(7) {
        let p: SnippetPage = api.get(&format!("/api/snippets?page_size=7&page={page}")).json();
        for item in p.items {
            assert_eq!(item.thumbnail_url, format!("/api/snippets/{}/thumbnail", item.snippet.snippet_id));
            assert!(seen.insert(item.snippet.snippet_id));
        }
    }
    assert_eq!(seen.len(), first.total);
    let kept: SnippetPage = api.get("/api/snippets?kept=true&page_size=1000").json();
    let discarded: SnippetPage = api.get("/api/snippets?kept=false&page_size=1000").json();
    assert_eq!(kept.total + discarded.total, first.total);
    assert!(kept.items.iter().all(|i| i.snippet.kept));
    let low: SnippetPage = api.get("/api/snippets?reason=irrelevant&page_size=1000").json();
    assert!(low.items.iter().all(|i| i.snippet.relevance_score.unwrap() < 0.7));
    let src: SnippetPage = api.get("/api/snippets?source=zoo_clips&page_size=1000").json();
    assert!(src.items.iter().all(|i| i.snippet.source_id == "zoo_clips"));
    assert_eq!(api.get("/api/snippets?page_size=0").status, 422);
    assert_eq!(api.get("/api/snippets?page_size=1001").status, 422);

    let id = &kept.items[0].snippet.snippet_id;
    let thumb = api.get(&format!("/api/snippets/{id}/thumbnail"));
    assert_eq!(thumb.status, 200);
    let t = decode_png(&thumb.body).unwrap();
    assert!(t.width.max(t.height) <= 128);
    assert_eq!(api.get(&format!("/api/snippets/{id}/keyframe")).status, 200);
    assert_eq!(api.get("/api/snippets/v999@0/keyframe").status, 404);

    // Label the rest; the queue then runs dry.
    loop {
        let r = api.get("/api/frames/next");
        if r.status == 204 {
            break;
        }
        let id = r.header("x-keyframe-ref").unwrap().to_string();
        assert_eq!(api.post("/api/labels", &label(&id, relevant(&id))).status, 201);
    }
    let status: StatusResponse = api.get("/api/pipeline/status").json();
    assert_eq!(status.labels, first.total);
    assert_eq!(status.threshold_override, Some(0.7));
    assert!(status.running.is_none() && !status.retraining);
    let filter = status.stages.iter().find(|s| s.stage == "filter").unwrap();
    assert!(filter.completed && filter.current_config);
    assert_eq!(filter.outputs, filtered.output_hashes);
    assert!(!status.stages.iter().find(|s| s.stage == "manifest").unwrap().completed);
    assert_eq!(read_truth(fixture.path()).unwrap(), truth);
}
