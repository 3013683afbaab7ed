//! Curation stages over a content-addressed workspace. Each stage reads the
//! outputs of earlier stages, writes its own outputs as objects and records a
//! run. A stage whose config and inputs are unchanged is not recomputed.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use privi_core::curation::{
    apply_allocation, apply_detections, apply_relevance, assign_species, build_manifest, chunk_timeline, detect_cuts,
    kept_counts, subsample, CompositionReport, DetectionBox, FrameSource, Keyframe, RelevanceConfig, Snippet,
};
use privi_core::providers::{DetectorProvider, EmbeddingProvider, SyntheticDetector, SyntheticEmbedder};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{DetectorConfig, EmbedderConfig, PipelineConfig, VideoInput};
use crate::error::{Error, Result};
use crate::formats::{decode_relevance, encode_relevance, from_jsonl, read_manifest, to_jsonl, write_manifest, EmbeddingStore};
use crate::frames::{keyframe, Decoder, DecoderFrameSource, DirFrameSource, VideoEntry, META_FILE};
use crate::http::{HttpProvider, FrameFetcher};
use crate::labels::{effective_labels, read_labels};
use crate::workspace::{sha256_hex, RunRecord, StageRecord, Workspace};

/// Curation stages in pipeline order.
pub const CURATION_STAGES: &[&str] = &["cuts", "chunk", "embed", "detect", "train-relevance", "filter", "subsample", "manifest"];

/// Cut detection result of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutRecord {
    pub video_ref: String,
    pub source_id: String,
    pub fps: f64,
    pub frame_count: usize,
    pub duration_s: f64,
    pub cuts: Vec<u64>,
    pub warnings: Vec<String>,
}

/// Raw detector output for one keyframe, before NMS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDetections {
    pub width: u32,
    pub height: u32,
    pub boxes: Vec<DetectionBox>,
}

/// Results of a provider-backed stage that could not finish.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Partial<T> {
    manifest: String,
    results: BTreeMap<String, T>,
    pending: Vec<String>,
}

/// Summary stored alongside a trained relevance model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceSummary {
    pub report: privi_core::curation::RelevanceReport,
    pub auto_threshold: f64,
    pub min_precision: f64,
    pub n_labels: usize,
    pub warnings: Vec<String>,
}

/// Output of the final manifest stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionOutput {
    pub report: CompositionReport,
    pub kept: usize,
    pub total: usize,
}

/// Random access to the configured videos.
pub struct Catalog {
    pub videos: Vec<VideoEntry>,
    dirs: BTreeMap<String, DirFrameSource>,
    decoder: Option<Arc<Decoder>>,
}

impl Catalog {
    pub fn load(config: &PipelineConfig) -> Result<Self> {
        match &config.videos {
            VideoInput::Directory { root } => {
                let mut names: Vec<String> = Vec::new();
                for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
                    let entry = entry.map_err(|e| Error::io(root, e))?;
                    if entry.path().join(META_FILE).is_file() {
                        names.push(entry.file_name().to_string_lossy().into_owned());
                    }
                }
                names.sort();
                let mut videos = Vec::new();
                let mut dirs = BTreeMap::new();
                for name in names {
                    let src = DirFrameSource::open(root.join(&name))?;
                    config.check_source(&src.meta.source_id, &name)?;
                    videos.push(VideoEntry {
                        video_ref: name.clone(),
                        source_id: src.meta.source_id.clone(),
                        fps: src.meta.fps,
                        frame_count: src.meta.frame_count,
                        label: src.meta.label.clone(),
                    });
                    dirs.insert(name, src);
                }
                Ok(Self { videos, dirs, decoder: None })
            }
            VideoInput::Decoder { command, videos } => {
                let mut videos = videos.clone();
                videos.sort_by(|a, b| a.video_ref.cmp(&b.video_ref));
                Ok(Self { videos, dirs: BTreeMap::new(), decoder: Some(Arc::new(Decoder::new(command.clone())?)) })
            }
        }
    }

    pub fn video(&self, video_ref: &str) -> Result<&VideoEntry> {
        self.videos
            .iter()
            .find(|v| v.video_ref == video_ref)
            .ok_or_else(|| Error::MissingArtifact(format!("video '{video_ref}'")))
    }

    pub fn source(&self, video_ref: &str) -> Result<Box<dyn FrameSource + Send + Sync>> {
        if let Some(d) = &self.decoder {
            return Ok(Box::new(DecoderFrameSource { decoder: d.clone(), video: self.video(video_ref)?.clone() }));
        }
        let src = self.dirs.get(video_ref).ok_or_else(|| Error::MissingArtifact(format!("video '{video_ref}'")))?;
        Ok(Box::new(src.clone()))
    }

    pub fn keyframe(&self, snippet: &Snippet) -> Result<Keyframe> {
        let video = self.video(&snippet.video_ref)?;
        Ok(keyframe(self.source(&snippet.video_ref)?.as_ref(), video, snippet)?)
    }

    /// Listing hash used as the input identity of the cut stage.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(&self.videos).expect("in-memory serialization"))
    }
}

/// Stage outputs by name.
pub type Outputs = BTreeMap<String, Vec<u8>>;

pub struct Pipeline {
    pub config: PipelineConfig,
    pub ws: Workspace,
    pool: rayon::ThreadPool,
    catalog: std::sync::OnceLock<Arc<Catalog>>,
}

fn parse_json<T: DeserializeOwned>(bytes: &[u8], name: &str) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::format(name, e.to_string()))
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec(value).expect("in-memory serialization");
    v.push(b'\n');
    v
}

impl Pipeline {
    pub fn new(config: PipelineConfig, ws: Workspace) -> Result<Self> {
        let workers = config.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
        Ok(Self { config, ws, pool, catalog: std::sync::OnceLock::new() })
    }

    pub fn catalog(&self) -> Result<Arc<Catalog>> {
        if let Some(c) = self.catalog.get() {
            return Ok(c.clone());
        }
        let c = Arc::new(Catalog::load(&self.config)?);
        Ok(self.catalog.get_or_init(|| c).clone())
    }

    pub fn embedder(&self) -> Result<Box<dyn EmbeddingProvider>> {
        Ok(match &self.config.embedder {
            EmbedderConfig::Synthetic { dim, noise_std, separation, labels, seed } => {
                let labels: Vec<&str> = labels.iter().map(String::as_str).collect();
                Box::new(SyntheticEmbedder::separated(seed.unwrap_or(self.config.seed), *dim, *noise_std, *separation, &labels)?)
            }
            EmbedderConfig::Http(h) => Box::new(HttpProvider::connect(h.clone())?),
        })
    }

    pub fn detector(&self) -> Result<Box<dyn DetectorProvider>> {
        Ok(match &self.config.detector {
            DetectorConfig::Synthetic { default, by_label } => {
                Box::new(SyntheticDetector { default: default.clone(), by_label: by_label.clone() })
            }
            DetectorConfig::Http(h) => Box::new(HttpProvider::connect(h.clone())?),
        })
    }

    /// Frame lookup for feature requests (`clip_ref` is a video ref).
    pub fn frame_fetcher(&self) -> Result<FrameFetcher> {
        let catalog = self.catalog()?;
        Ok(Arc::new(move |clip_ref: &str, index: u64| {
            let src = catalog.source(clip_ref).map_err(|e| privi_core::Error::InvalidInput(e.to_string()))?;
            src.frame(index as usize)
        }))
    }

    fn output_hash(&self, stage: &str, name: &str) -> Result<String> {
        let rec = self
            .ws
            .stage_record(stage)?
            .ok_or_else(|| Error::MissingArtifact(format!("{stage} output '{name}' (run `{stage}` first)")))?;
        rec.outputs.get(name).cloned().ok_or_else(|| Error::MissingArtifact(format!("{stage} output '{name}'")))
    }

    /// Input identities of a stage; fails naming the first missing artifact.
    pub fn stage_inputs(&self, stage: &str) -> Result<BTreeMap<String, String>> {
        let mut m = BTreeMap::new();
        match stage {
            "cuts" => {
                m.insert("videos".into(), self.catalog()?.hash());
            }
            "chunk" => {
                m.insert("cuts".into(), self.output_hash("cuts", "cuts")?);
            }
            "embed" | "detect" => {
                m.insert("manifest".into(), self.output_hash("chunk", "manifest")?);
            }
            "train-relevance" => {
                m.insert("embeddings".into(), self.output_hash("embed", "embeddings")?);
                m.insert("index".into(), self.output_hash("embed", "index")?);
                let labels = effective_labels(&read_labels(&self.ws)?);
                m.insert("labels".into(), sha256_hex(&serde_json::to_vec(&labels).expect("in-memory serialization")));
            }
            "filter" => {
                m.insert("manifest".into(), self.output_hash("embed", "manifest")?);
                m.insert("detections".into(), self.output_hash("detect", "detections")?);
                if self.ws.stage_record("train-relevance")?.is_some() {
                    m.insert("relevance_model".into(), self.output_hash("train-relevance", "model")?);
                    m.insert("relevance_scores".into(), self.output_hash("train-relevance", "scores")?);
                    let t = self.ws.state()?.threshold;
                    m.insert("threshold".into(), sha256_hex(&serde_json::to_vec(&t).expect("in-memory serialization")));
                }
            }
            "subsample" => {
                m.insert("manifest".into(), self.output_hash("filter", "manifest")?);
            }
            "manifest" => {
                m.insert("manifest".into(), self.output_hash("subsample", "manifest")?);
            }
            other => return Err(Error::Config(format!("unknown stage '{other}'"))),
        }
        Ok(m)
    }

    /// Runs one curation stage, or reuses its outputs when its config and
    /// inputs are unchanged.
    pub fn run_stage(&self, stage: &str) -> Result<RunRecord> {
        self.run_with(stage, |p, inputs| p.compute(stage, inputs))
    }

    pub(crate) fn run_with(
        &self,
        stage: &str,
        compute: impl FnOnce(&Self, &BTreeMap<String, String>) -> Result<Outputs> + Send,
    ) -> Result<RunRecord> {
        let inputs = self.stage_inputs_any(stage)?;
        self.run_with_inputs(stage, inputs, compute)
    }

    pub(crate) fn run_with_inputs(
        &self,
        stage: &str,
        inputs: BTreeMap<String, String>,
        compute: impl FnOnce(&Self, &BTreeMap<String, String>) -> Result<Outputs> + Send,
    ) -> Result<RunRecord> {
        let started = Instant::now();
        let config_hash = self.config.hash();
        if let Some(prev) = self.ws.stage_record(stage)? {
            if prev.config_hash == config_hash && prev.inputs == inputs && prev.outputs.values().all(|h| self.ws.has(h)) {
                let run = RunRecord {
                    stage: stage.into(),
                    config_hash,
                    input_hashes: inputs,
                    output_hashes: prev.outputs,
                    duration_ms: started.elapsed().as_millis() as u64,
                    reused: true,
                };
                self.ws.append_run(&run)?;
                return Ok(run);
            }
        }
        let outputs = self.pool.install(|| compute(self, &inputs))?;
        let mut hashes = BTreeMap::new();
        for (name, bytes) in &outputs {
            hashes.insert(name.clone(), self.ws.put(bytes)?);
        }
        self.ws.set_stage_record(&StageRecord {
            stage: stage.into(),
            config_hash: config_hash.clone(),
            inputs: inputs.clone(),
            outputs: hashes.clone(),
        })?;
        let run = RunRecord {
            stage: stage.into(),
            config_hash,
            input_hashes: inputs,
            output_hashes: hashes,
            duration_ms: started.elapsed().as_millis() as u64,
            reused: false,
        };
        self.ws.append_run(&run)?;
        Ok(run)
    }

    fn stage_inputs_any(&self, stage: &str) -> Result<BTreeMap<String, String>> {
        if CURATION_STAGES.contains(&stage) {
            self.stage_inputs(stage)
        } else {
            crate::experiments::stage_inputs(self, stage)
        }
    }

    /// Runs every curation stage in order.
    pub fn run_all(&self) -> Result<Vec<RunRecord>> {
        CURATION_STAGES.iter().map(|s| self.run_stage(s)).collect()
    }

    fn compute(&self, stage: &str, inputs: &BTreeMap<String, String>) -> Result<Outputs> {
        match stage {
            "cuts" => self.compute_cuts(),
            "chunk" => self.compute_chunk(&inputs["cuts"]),
            "embed" => self.compute_embed(&inputs["manifest"]),
            "detect" => self.compute_detect(&inputs["manifest"]),
            "train-relevance" => self.compute_relevance(),
            "filter" => self.compute_filter(inputs),
            "subsample" => self.compute_subsample(&inputs["manifest"]),
            "manifest" => self.compute_manifest(&inputs["manifest"]),
            other => Err(Error::Config(format!("unknown stage '{other}'"))),
        }
    }

    fn compute_cuts(&self) -> Result<Outputs> {
        let catalog = self.catalog()?;
        let threshold = self.config.cuts.threshold;
        let records: Vec<CutRecord> = catalog
            .videos
            .par_iter()
            .map(|v| {
                let src = catalog.source(&v.video_ref)?;
                let det = detect_cuts(src.as_ref(), &v.video_ref, threshold)?;
                Ok(CutRecord {
                    video_ref: v.video_ref.clone(),
                    source_id: v.source_id.clone(),
                    fps: v.fps,
                    frame_count: v.frame_count,
                    duration_s: v.duration_s(),
                    cuts: det.cuts.cuts,
                    warnings: det.warnings,
                })
            })
            .collect::<Result<_>>()?;
        Ok([("cuts".to_string(), to_jsonl(&records))].into())
    }

    fn compute_chunk(&self, cuts_hash: &str) -> Result<Outputs> {
        let records: Vec<CutRecord> = from_jsonl(&self.ws.get(cuts_hash)?, "cuts")?;
        let mut snippets = Vec::new();
        for r in &records {
            let source = self.config.source(&r.source_id).ok_or_else(|| Error::Config(format!("unknown source '{}'", r.source_id)))?;
            let times: Vec<f64> = r.cuts.iter().map(|&c| c as f64 / r.fps).collect();
            snippets.extend(chunk_timeline(&r.source_id, &r.video_ref, r.duration_s, &times, self.config.chunk.length_s, source.chunk_stride_s)?);
        }
        Ok([("manifest".to_string(), write_manifest(&snippets))].into())
    }

    fn manifest(&self, hash: &str) -> Result<Vec<Snippet>> {
        read_manifest(&self.ws.get(hash)?, hash)
    }

    /// Calls `f` for every snippet not yet resolved, on the worker pool.
    /// Provider outages leave snippets pending (saved under `<stage>.partial`)
    /// and fail the stage with a provider error; other errors abort.
    fn resumable<T>(&self, stage: &str, manifest_hash: &str, snippets: &[Snippet], f: impl Fn(&Snippet) -> privi_core::Result<T> + Sync) -> Result<BTreeMap<String, T>>
    where
        T: Serialize + DeserializeOwned + Send + Clone,
    {
        let partial_stage = format!("{stage}.partial");
        let mut results: BTreeMap<String, T> = BTreeMap::new();
        if let Some(rec) = self.ws.stage_record(&partial_stage)? {
            if let Some(h) = rec.outputs.get("partial") {
                let p: Partial<T> = parse_json(&self.ws.get(h)?, &partial_stage)?;
                if p.manifest == manifest_hash {
                    results = p.results;
                }
            }
        }
        let todo: Vec<&Snippet> = snippets.iter().filter(|s| !results.contains_key(&s.snippet_id)).collect();
        let answers: Vec<privi_core::Result<T>> = todo.par_iter().map(|s| f(s)).collect();
        let mut pending = Vec::new();
        for (s, a) in todo.iter().zip(answers) {
            match a {
                Ok(v) => {
                    results.insert(s.snippet_id.clone(), v);
                }
                Err(privi_core::Error::ProviderUnavailable(_)) => pending.push(s.snippet_id.clone()),
                Err(e) => return Err(e.into()),
            }
        }
        if !pending.is_empty() {
            let n = pending.len();
            let first = pending[0].clone();
            let p = Partial { manifest: manifest_hash.to_string(), results, pending };
            let h = self.ws.put(&json_bytes(&p))?;
            self.ws.set_stage_record(&StageRecord {
                stage: partial_stage,
                config_hash: self.config.hash(),
                inputs: [("manifest".to_string(), manifest_hash.to_string())].into(),
                outputs: [("partial".to_string(), h)].into(),
            })?;
            return Err(privi_core::Error::ProviderUnavailable(format!(
                "{stage}: {n} snippet(s) pending (first: {first}); finished results are saved, rerun `{stage}` to resume"
            ))
            .into());
        }
        Ok(results)
    }

    fn compute_embed(&self, manifest_hash: &str) -> Result<Outputs> {
        let mut snippets = self.manifest(manifest_hash)?;
        let catalog = self.catalog()?;
        let embedder = self.embedder()?;
        let results = self.resumable("embed", manifest_hash, &snippets, |s| {
            let kf = catalog.keyframe(s).map_err(|e| privi_core::Error::InvalidInput(e.to_string()))?;
            embedder.embed(&kf)
        })?;
        let mut store = EmbeddingStore::new(embedder.dim());
        for s in &snippets {
            store.push(&s.snippet_id, results[&s.snippet_id].clone())?;
        }
        let data = store.encode();
        let data_hash = sha256_hex(&data);
        for s in &mut snippets {
            s.embedding_ref = Some(format!("{}#{}", data_hash, store.index[&s.snippet_id]));
        }
        Ok([
            ("embeddings".to_string(), data),
            ("index".to_string(), store.encode_index()),
            ("manifest".to_string(), write_manifest(&snippets)),
        ]
        .into())
    }

    fn compute_detect(&self, manifest_hash: &str) -> Result<Outputs> {
        let snippets = self.manifest(manifest_hash)?;
        let catalog = self.catalog()?;
        let detector = self.detector()?;
        let prompt = self.config.detection.prompt.clone();
        let results = self.resumable("detect", manifest_hash, &snippets, |s| {
            let kf = catalog.keyframe(s).map_err(|e| privi_core::Error::InvalidInput(e.to_string()))?;
            let boxes = detector.detect(&kf, &prompt)?;
            Ok(RawDetections { width: kf.frame.width, height: kf.frame.height, boxes })
        })?;
        Ok([("detections".to_string(), json_bytes(&results))].into())
    }

    pub fn load_embeddings(&self) -> Result<EmbeddingStore> {
        let data = self.ws.get(&self.output_hash("embed", "embeddings")?)?;
        let index = self.ws.get(&self.output_hash("embed", "index")?)?;
        EmbeddingStore::decode(&data, &index, "embeddings")
    }

    fn relevance_config(&self) -> RelevanceConfig {
        RelevanceConfig { seed: self.config.seed ^ self.config.relevance.seed, ..self.config.relevance.clone() }
    }

    fn compute_relevance(&self) -> Result<Outputs> {
        let store = self.load_embeddings()?;
        let labels = effective_labels(&read_labels(&self.ws)?);
        let mut warnings = Vec::new();
        let mut data = Vec::new();
        for (k, &relevant) in &labels {
            match store.get(k) {
                Some(e) => data.push((e.to_vec(), relevant)),
                None => warnings.push(format!("label for '{k}' has no embedding and was skipped")),
            }
        }
        let config = self.relevance_config();
        let (model, report) = privi_core::curation::train_relevance(&data, &config)?;
        let ids: Vec<&String> = store.index.keys().collect();
        let rows: Vec<&[f32]> = ids.iter().map(|id| store.get(id).unwrap()).collect();
        let scores: BTreeMap<&String, f64> = ids.into_iter().zip(model.scores(&rows)?).collect();
        let summary = RelevanceSummary {
            auto_threshold: model.threshold,
            min_precision: config.min_precision,
            n_labels: data.len(),
            report,
            warnings,
        };
        Ok([
            ("model".to_string(), encode_relevance(&model)),
            ("report".to_string(), json_bytes(&summary)),
            ("scores".to_string(), json_bytes(&scores)),
        ]
        .into())
    }

    pub fn relevance_summary(&self) -> Result<RelevanceSummary> {
        parse_json(&self.ws.get(&self.output_hash("train-relevance", "report")?)?, "relevance report")
    }

    pub fn relevance_scores(&self) -> Result<BTreeMap<String, f64>> {
        parse_json(&self.ws.get(&self.output_hash("train-relevance", "scores")?)?, "relevance scores")
    }

    /// Threshold the filter stage applies: the console override if set,
    /// else the model's auto-selected one.
    pub fn effective_threshold(&self) -> Result<Option<f64>> {
        if self.ws.stage_record("train-relevance")?.is_none() {
            return Ok(None);
        }
        if let Some(t) = self.ws.state()?.threshold {
            return Ok(Some(t));
        }
        let model = decode_relevance(&self.ws.get(&self.output_hash("train-relevance", "model")?)?, "relevance model")?;
        Ok(Some(model.threshold))
    }

    fn compute_filter(&self, inputs: &BTreeMap<String, String>) -> Result<Outputs> {
        let mut snippets = self.manifest(&inputs["manifest"])?;
        if inputs.contains_key("relevance_scores") {
            let scores: BTreeMap<String, f64> = parse_json(&self.ws.get(&inputs["relevance_scores"])?, "relevance scores")?;
            let threshold = self.effective_threshold()?.expect("relevance model present");
            apply_relevance(&mut snippets, &scores, threshold);
        }
        let detections: BTreeMap<String, RawDetections> = parse_json(&self.ws.get(&inputs["detections"])?, "detections")?;
        for s in snippets.iter_mut().filter(|s| s.kept) {
            let d = detections
                .get(&s.snippet_id)
                .ok_or_else(|| Error::MissingArtifact(format!("detections for {}", s.snippet_id)))?;
            if !apply_detections(s, &d.boxes, d.width, d.height, &self.config.detection)? {
                let source = self.config.source(&s.source_id).ok_or_else(|| Error::Config(format!("unknown source '{}'", s.source_id)))?;
                s.species = assign_species(s, source);
            }
        }
        Ok([("manifest".to_string(), write_manifest(&snippets))].into())
    }

    fn compute_subsample(&self, manifest_hash: &str) -> Result<Outputs> {
        let mut snippets = self.manifest(manifest_hash)?;
        let counts = kept_counts(&snippets);
        let targets: BTreeMap<String, f64> = self
            .config
            .sources
            .iter()
            .filter(|s| counts.contains_key(&s.id))
            .map(|s| (s.id.clone(), s.target_proportion))
            .collect();
        let summary = match self.config.subsample.budget {
            Some(budget) => {
                let allocation = subsample(&counts, &targets, budget)?;
                apply_allocation(&mut snippets, &allocation, self.config.seed);
                serde_json::json!({ "budget": budget, "per_source": allocation.per_source, "composition_deviates": allocation.composition_deviates })
            }
            None => serde_json::json!({ "budget": null, "per_source": counts, "composition_deviates": false }),
        };
        Ok([("manifest".to_string(), write_manifest(&snippets)), ("allocation".to_string(), json_bytes(&summary))].into())
    }

    fn compute_manifest(&self, manifest_hash: &str) -> Result<Outputs> {
        let snippets = self.manifest(manifest_hash)?;
        let total = snippets.len();
        let (manifest, report) = build_manifest(snippets, self.config.sources.clone())?;
        let out = CompositionOutput { kept: manifest.kept().count(), total, report };
        Ok([
            ("manifest".to_string(), write_manifest(&manifest.snippets)),
            ("sources".to_string(), json_bytes(&manifest.sources)),
            ("composition".to_string(), json_bytes(&out)),
        ]
        .into())
    }

    /// Snippets of the most advanced curation stage that has run.
    pub fn latest_manifest(&self) -> Result<Option<(String, Vec<Snippet>)>> {
        for stage in ["manifest", "subsample", "filter", "embed", "chunk"] {
            if let Some(rec) = self.ws.stage_record(stage)? {
                if let Some(h) = rec.outputs.get("manifest") {
                    return Ok(Some((stage.to_string(), self.manifest(h)?)));
                }
            }
        }
        Ok(None)
    }

    pub fn stage_manifest(&self, stage: &str) -> Result<Vec<Snippet>> {
        self.manifest(&self.output_hash(stage, "manifest")?)
    }

    pub fn composition(&self) -> Result<CompositionOutput> {
        parse_json(&self.ws.get(&self.output_hash("manifest", "composition")?)?, "composition")
    }
}

/// Table-1 style text rendering of a composition report.
pub fn render_composition(out: &CompositionOutput) -> String {
    let r = &out.report;
    let mut s = String::new();
    let names: Vec<&str> = r.columns.iter().map(|c| c.name.as_str()).collect();
    s.push_str(&format!("{:<24}", ""));
    for n in &names {
        s.push_str(&format!("{n:>14}"));
    }
    s.push('\n');
    let row = |s: &mut String, label: &str, f: &dyn Fn(&privi_core::curation::CompositionColumn) -> String| {
        s.push_str(&format!("{label:<24}"));
        for c in &r.columns {
            s.push_str(&format!("{:>14}", f(c)));
        }
        s.push('\n');
    };
    row(&mut s, "unique hours", &|c| format!("{:.3}", c.unique_hours));
    row(&mut s, "snippets", &|c| c.snippets.to_string());
    let mut species: Vec<&String> = r.columns.iter().flat_map(|c| c.species_pct.keys()).collect();
    species.sort();
    species.dedup();
    for sp in species {
        row(&mut s, &format!("species {sp} %"), &|c| format!("{:.1}", c.species_pct.get(sp).copied().unwrap_or(0.0)));
    }
    let mut settings: Vec<&String> = r.columns.iter().flat_map(|c| c.setting_pct.keys()).collect();
    settings.sort();
    settings.dedup();
    for st in settings {
        row(&mut s, &format!("setting {st} %"), &|c| format!("{:.1}", c.setting_pct.get(st).copied().unwrap_or(0.0)));
    }
    s.push_str(&format!("kept {} of {} snippets\n", out.kept, out.total));
    for (reason, n) in &r.discarded {
        s.push_str(&format!("discarded ({reason}): {n}\n"));
    }
    s
}

pub fn open_pipeline(config_path: &Path, workspace: Option<&Path>, seed: Option<u64>, workers: Option<usize>) -> Result<Pipeline> {
    let mut config = PipelineConfig::load(config_path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(w) = workers {
        config.workers = Some(w);
    }
    config.validate()?;
    let root = workspace
        .map(Path::to_path_buf)
        .or_else(|| config.workspace.clone())
        .ok_or_else(|| Error::Config("no workspace: pass --workspace, set PRIVI_WORKSPACE or add `workspace` to the config".into()))?;
    Pipeline::new(config, Workspace::open(root)?)
}
