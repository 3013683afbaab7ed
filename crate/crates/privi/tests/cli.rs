use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use privi::frames::{write_frame_dir, VideoMeta};
use privi::pipeline::open_pipeline;
use privi::workspace::RunRecord;
use privi_core::curation::{DiscardReason, Frame};
use serde_json::json;

struct Corpus {
    dir: tempfile::TempDir,
}

impl Corpus {
    /// `videos`: `(name, source, seconds)` at 4 fps, one flat color each.
    fn new(videos: &[(&str, &str, usize)], sources: serde_json::Value, detector: serde_json::Value) -> Self {
        let dir = tempfile::tempdir().unwrap();
        for (i, (name, source, seconds)) in videos.iter().enumerate() {
            let meta = VideoMeta { source_id: source.to_string(), fps: 4.0, frame_count: seconds * 4, width: 8, height: 8, label: Some("a".into()) };
            let frames = (0..seconds * 4).map(|_| Frame::solid(8, 8, [40 + 30 * i as u8, 90, 160]));
            write_frame_dir(&dir.path().join("videos").join(name), &meta, frames).unwrap();
        }
        let cfg = json!({
            "sources": sources,
            "videos": {"kind": "directory", "root": "videos"},
            "seed": 1,
            "embedder": {"kind": "synthetic", "dim": 8, "noise_std": 1.0, "separation": 8.0, "labels": ["a", "b"]},
            "detector": detector
        });
        std::fs::write(dir.path().join("config.json"), serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
        Corpus { dir }
    }

    fn config(&self) -> PathBuf {
        self.dir.path().join("config.json")
    }

    fn ws(&self) -> PathBuf {
        self.dir.path().join("ws")
    }

    fn privi(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_privi"))
            .args(args)
            .arg("--config")
            .arg(self.config())
            .arg("--workspace")
            .arg(self.ws())
            .output()
            .unwrap()
    }

    fn stage(&self, stage: &str) -> RunRecord {
        let out = self.privi(&[stage]);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
        serde_json::from_slice(&out.stdout).unwrap()
    }
}

fn source(id: &str, setting: &str, species: &str, p: f64, stride: f64) -> serde_json::Value {
    json!({"id": id, "setting": setting, "species": [species], "diversity": "low", "target_proportion": p, "chunk_stride_s": stride})
}

fn primate_box() -> serde_json::Value {
    json!({"kind": "synthetic", "default": [{"x1": 0.1, "y1": 0.1, "x2": 0.9, "y2": 0.9, "score": 0.9, "label": "primate"}]})
}

#[test]
fn nine_second_video_gives_four_snippets() {
    let c = Corpus::new(&[("clip", "zoo", 9)], json!([source("zoo", "captive", "macaque", 1.0, 2.0)]), primate_box());
    c.stage("cuts");
    let run = c.stage("chunk");
    assert!(!run.reused);
    let snippets = open_pipeline(&c.config(), Some(&c.ws()), None, None).unwrap().stage_manifest("chunk").unwrap();
    let spans: Vec<(f64, f64)> = snippets.iter().map(|s| (s.start_s, s.end_s)).collect();
    assert_eq!(spans, [(0.0, 3.0), (2.0, 5.0), (4.0, 7.0), (6.0, 9.0)]);
    assert!(c.stage("chunk").reused);
}

#[test]
fn empty_detector_discards_everything() {
    let c = Corpus::new(
        &[("a", "zoo", 9), ("b", "zoo", 6)],
        json!([source("zoo", "captive", "macaque", 1.0, 2.0)]),
        json!({"kind": "synthetic"}),
    );
    for stage in ["cuts", "chunk", "embed", "detect", "filter"] {
        c.stage(stage);
    }
    let filtered = open_pipeline(&c.config(), Some(&c.ws()), None, None).unwrap().stage_manifest("filter").unwrap();
    assert_eq!(filtered.len(), 4 + 2);
    assert!(filtered.iter().all(|s| !s.kept && s.discard_reason == Some(DiscardReason::NoDetection)));
}

#[test]
fn composition_matches_hand_count() {
    let c = Corpus::new(
        &[("w1", "wild_cams", 9), ("w2", "wild_cams", 9), ("z1", "zoo", 9)],
        json!([source("wild_cams", "wild", "chimpanzee", 0.5, 2.0), source("zoo", "captive", "macaque", 0.5, 3.0)]),
        primate_box(),
    );
    for stage in ["cuts", "chunk", "embed", "detect", "filter", "subsample", "manifest"] {
        c.stage(stage);
    }
    // wild_cams: 2 videos x starts 0,2,4,6; zoo: starts 0,3,6.
    let out = open_pipeline(&c.config(), Some(&c.ws()), None, None).unwrap().composition().unwrap();
    assert_eq!((out.kept, out.total), (11, 11));
    let r = &out.report;
    let close = |a: f64, b: f64| assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    close(r.source_pct["wild_cams"], 800.0 / 11.0);
    close(r.source_pct["zoo"], 300.0 / 11.0);
    let total = r.total();
    assert_eq!(total.snippets, 11);
    close(total.species_pct["chimpanzee"], 800.0 / 11.0);
    close(total.species_pct["macaque"], 300.0 / 11.0);
    close(total.setting_pct["wild"], 800.0 / 11.0);
    close(total.setting_pct["captive"], 300.0 / 11.0);
    close(total.unique_hours, 27.0 / 3600.0);
    let wild = r.columns.iter().find(|col| col.name == "wild_cams").unwrap();
    close(wild.unique_hours, 18.0 / 3600.0);
    close(wild.species_pct["chimpanzee"], 100.0);

    let text = c.privi(&["report", "composition"]);
    assert!(text.status.success());
    let text = String::from_utf8(text.stdout).unwrap();
    assert!(text.contains("wild_cams") && text.contains("zoo") && text.contains("chimpanzee"), "{text}");
}

#[test]
fn budget_rebalances_sources() {
    let c = Corpus::new(
        &[("w1", "wild_cams", 9), ("w2", "wild_cams", 9), ("z1", "zoo", 9)],
        json!([source("wild_cams", "wild", "chimpanzee", 0.5, 2.0), source("zoo", "captive", "macaque", 0.5, 3.0)]),
        primate_box(),
    );
    let mut cfg: serde_json::Value = serde_json::from_slice(&std::fs::read(c.config()).unwrap()).unwrap();
    cfg["subsample"] = json!({"budget": 6});
    std::fs::write(c.config(), serde_json::to_vec(&cfg).unwrap()).unwrap();
    for stage in ["cuts", "chunk", "embed", "detect", "filter", "subsample"] {
        c.stage(stage);
    }
    let snippets = open_pipeline(&c.config(), Some(&c.ws()), None, None).unwrap().stage_manifest("subsample").unwrap();
    let kept = |src: &str| snippets.iter().filter(|s| s.kept && s.source_id == src).count();
    assert_eq!((kept("wild_cams"), kept("zoo")), (3, 3));
    assert_eq!(snippets.iter().filter(|s| s.discard_reason == Some(DiscardReason::SubsampledOut)).count(), 5);
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn exit_codes() {
    let c = Corpus::new(&[("clip", "zoo", 9)], json!([source("zoo", "captive", "macaque", 1.0, 2.0)]), primate_box());
    let out = c.privi(&["filter"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing artifact"));
    assert_eq!(code(&c.privi(&["train-head"])), 2);

    let closed = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let mut cfg: serde_json::Value = serde_json::from_slice(&std::fs::read(c.config()).unwrap()).unwrap();
    cfg["embedder"] = json!({"kind": "http", "base_url": format!("http://{closed}"), "retries": 0});
    std::fs::write(c.config(), serde_json::to_vec(&cfg).unwrap()).unwrap();
    c.stage("cuts");
    c.stage("chunk");
    assert_eq!(code(&c.privi(&["embed"])), 3);

    let missing = Command::new(env!("CARGO_BIN_EXE_privi"))
        .args(["cuts", "--config"])
        .arg(Path::new("/nonexistent/privi.json"))
        .output()
        .unwrap();
    assert_eq!(code(&missing), 1);
    let bad_args = Command::new(env!("CARGO_BIN_EXE_privi")).arg("cuts").output().unwrap();
    assert!(!bad_args.status.success());
}

#[test]
fn fixture_commands_drive_the_whole_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = dir.path().join("fx");
    let privi = || Command::new(env!("CARGO_BIN_EXE_privi"));
    assert!(privi().args(["fixture", "--videos", "30", "--out"]).arg(&fixture).output().unwrap().status.success());
    let common = |cmd: &mut Command| {
        cmd.arg("--config").arg(fixture.join("config.json")).arg("--workspace").arg(dir.path().join("ws"));
    };
    for stage in ["cuts", "chunk", "embed", "detect"] {
        let mut cmd = privi();
        cmd.arg(stage);
        common(&mut cmd);
        assert!(cmd.output().unwrap().status.success(), "{stage}");
    }
    let mut labels = privi();
    labels.args(["fixture-labels", "--count", "60", "--fixture"]).arg(&fixture);
    common(&mut labels);
    assert!(labels.output().unwrap().status.success());
    for stage in ["train-relevance", "filter", "subsample", "manifest"] {
        let mut cmd = privi();
        cmd.arg(stage);
        common(&mut cmd);
        assert!(cmd.output().unwrap().status.success(), "{stage}");
    }
    let mut report = privi();
    report.args(["report", "relevance"]);
    common(&mut report);
    let out = report.output().unwrap();
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["n_labels"], 60);
    assert!(summary["report"]["roc_auc"].as_f64().unwrap() > 0.9);
}
