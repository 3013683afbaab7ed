//! Frozen-feature classifier experiments and the latent-prediction sandbox:
//! head training, ensemble/multi-view evaluation, label-efficiency curves
//! and toy pretraining runs.

use std::collections::BTreeMap;

use privi_core::classifier::{
    evaluate_protocol, protocol_views, train_head, view_clip, AttentiveClassifier, MiniclipSample, Task, TrainedHead,
};
use privi_core::jepa::{run_pretrain, Diagnostic, JepaConfig, SyntheticMotion, TargetMode};
use privi_core::metrics::{
    accuracy, label_efficiency_subsets, map_report, mean_ci95, single_label_report, Aggregates, MetricReport, PredictionRecord,
    Truth,
};
use privi_core::numerics::Tensor;
use privi_core::providers::{CropRect, FeatureProvider, MiniclipRef, SyntheticFeatures};
use privi_core::RngSeed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetConfig, ExperimentConfig, FeaturesConfig};
use crate::error::{Error, Result};
use crate::formats::{
    decode_classifier, encode_classifier, encode_jepa, from_jsonl, plot_csv, report_jsonl, to_jsonl, CurvePoint,
};
use crate::http::HttpProvider;
use crate::pipeline::{Outputs, Pipeline};
use crate::workspace::sha256_hex;

pub const EXPERIMENT_STAGES: &[&str] = &["train-head", "eval", "label-efficiency", "jepa-toy"];

/// Steps averaged for the initial and final loss of a pretraining run.
pub const LOSS_HEAD_STEPS: usize = 20;
pub const LOSS_TAIL_STEPS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One labeled miniclip of an experiment dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiniclipRecord {
    pub sample_id: String,
    pub clip_ref: String,
    pub sequence_id: String,
    pub split: Split,
    pub frames: Vec<u64>,
    /// Length of the source clip, bounding view offsets.
    pub frame_count: u64,
    pub crop: CropRect,
    /// Single-label class name.
    #[serde(default)]
    pub label: Option<String>,
    /// Multi-label class names.
    #[serde(default)]
    pub labels: Vec<String>,
}

impl MiniclipRecord {
    pub fn clip(&self) -> MiniclipRef {
        MiniclipRef { clip_ref: self.clip_ref.clone(), frames: self.frames.clone(), crop: self.crop, label_hint: self.label.clone() }
    }

    pub fn truth(&self, classes: &[String], task: Task) -> Result<Truth> {
        let index = |name: &str| {
            classes
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::Config(format!("sample {} has unknown class '{name}'", self.sample_id)))
        };
        match task {
            Task::SingleLabel => {
                let l = self.label.as_deref().ok_or_else(|| Error::Config(format!("sample {} has no label", self.sample_id)))?;
                Ok(Truth::Class(index(l)?))
            }
            Task::MultiLabel => {
                let mut v = vec![false; classes.len()];
                for l in &self.labels {
                    v[index(l)?] = true;
                }
                Ok(Truth::Labels(v))
            }
        }
    }
}

/// `n` frame indices spread evenly over a clip of `len` frames.
pub fn even_frames(len: u64, n: u64) -> Vec<u64> {
    (0..n).map(|k| ((2 * k + 1) * len) / (2 * n)).collect()
}

/// Sequences of one class each, classes balanced per split and shuffled.
pub fn synthetic_dataset(
    classes: &[String],
    train: usize,
    val: usize,
    test: usize,
    clips_per_sequence: usize,
    clip_frames: u64,
    frames_per_clip: u64,
    seed: u64,
) -> Vec<MiniclipRecord> {
    let mut rng = RngSeed::new(seed, 0xDA7A).rng();
    let mut out = Vec::new();
    for (split, n) in [(Split::Train, train), (Split::Val, val), (Split::Test, test)] {
        let mut labels: Vec<usize> = (0..n).map(|i| i % classes.len()).collect();
        rng.shuffle(&mut labels);
        let tag = match split {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        };
        for (i, &c) in labels.iter().enumerate() {
            let seq = format!("{tag}-seq{i:04}");
            for j in 0..clips_per_sequence {
                out.push(MiniclipRecord {
                    sample_id: format!("{seq}-clip{j}"),
                    clip_ref: format!("{seq}-clip{j}"),
                    sequence_id: seq.clone(),
                    split,
                    frames: even_frames(clip_frames, frames_per_clip),
                    frame_count: clip_frames,
                    crop: CropRect { x1: 0.0, y1: 0.0, x2: 224.0, y2: 224.0 },
                    label: Some(classes[c].clone()),
                    labels: Vec::new(),
                });
            }
        }
    }
    out
}

/// Per-sample frozen features: the plain clip or the three protocol views.
pub struct FeatureSet {
    pub records: Vec<MiniclipRecord>,
    pub views: Vec<Vec<Tensor>>,
    pub truths: Vec<Truth>,
}

impl FeatureSet {
    pub fn samples(&self) -> Vec<MiniclipSample> {
        self.records
            .iter()
            .zip(&self.views)
            .zip(&self.truths)
            .map(|((r, v), t)| MiniclipSample {
                sample_id: r.sample_id.clone(),
                tokens: v[0].clone(),
                truth: t.clone(),
                sequence_id: r.sequence_id.clone(),
                view_id: 0,
            })
            .collect()
    }
}

/// Summary of one trained ensemble member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSummary {
    pub seed: u64,
    pub selected_epoch: usize,
    pub best_val_metric: Option<f64>,
    pub final_train_loss: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRun {
    pub fraction: f64,
    pub repeat: usize,
    pub sequences: usize,
    pub samples: usize,
    pub achieved_fraction: f64,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencySummary {
    pub metric: String,
    pub points: Vec<CurvePoint>,
    pub full_metric: f64,
    /// `full_metric − mean` per fraction, in `points` order.
    pub degradation: Vec<f64>,
    /// Degradation never grows as the fraction grows.
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub target_mode: TargetMode,
    pub steps: usize,
    /// Mean loss over the first steps.
    pub initial_loss: f64,
    /// Mean loss over the last steps.
    pub final_loss: f64,
    pub loss_ratio: f64,
    pub initial_variance: f64,
    pub min_variance: f64,
    pub final_variance: f64,
    pub aborted: Option<String>,
}

impl PretrainSummary {
    pub fn from_diagnostics(mode: TargetMode, d: &[Diagnostic], aborted: Option<String>) -> Self {
        let mean = |xs: &[Diagnostic]| xs.iter().map(|x| x.loss).sum::<f64>() / xs.len().max(1) as f64;
        let head = &d[..d.len().min(LOSS_HEAD_STEPS)];
        let tail = &d[d.len().saturating_sub(LOSS_TAIL_STEPS)..];
        let initial_loss = mean(head);
        let final_loss = mean(tail);
        Self {
            target_mode: mode,
            steps: d.len(),
            initial_loss,
            final_loss,
            loss_ratio: final_loss / initial_loss,
            initial_variance: d.first().map_or(f64::NAN, |x| x.target_variance),
            min_variance: d.iter().map(|x| x.target_variance).fold(f64::INFINITY, f64::min),
            final_variance: d.last().map_or(f64::NAN, |x| x.target_variance),
            aborted,
        }
    }
}

fn experiment(p: &Pipeline) -> Result<&ExperimentConfig> {
    p.config.experiment.as_ref().ok_or_else(|| Error::Config("the config has no `experiment` section".into()))
}

pub fn feature_provider(p: &Pipeline, exp: &ExperimentConfig) -> Result<Box<dyn FeatureProvider>> {
    Ok(match &exp.features {
        FeaturesConfig::Synthetic { layout, dim, mean_scale, noise_std, seed } => {
            let classes: Vec<&str> = exp.classes.iter().map(String::as_str).collect();
            Box::new(SyntheticFeatures::new(seed.unwrap_or(p.config.seed), *layout, *dim, &classes, *mean_scale, *noise_std)?)
        }
        FeaturesConfig::Http(h) => Box::new(HttpProvider::connect(h.clone())?.with_frames(p.frame_fetcher()?)),
    })
}

/// The experiment's miniclip records.
pub fn dataset(p: &Pipeline) -> Result<Vec<MiniclipRecord>> {
    let exp = experiment(p)?;
    match &exp.dataset {
        DatasetConfig::File { path } => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            from_jsonl(&bytes, &path.display().to_string())
        }
        DatasetConfig::Synthetic { train_sequences, val_sequences, test_sequences, clips_per_sequence, clip_frames } => {
            if exp.task != Task::SingleLabel {
                return Err(Error::Config("synthetic datasets are single-label".into()));
            }
            let frames = match &exp.features {
                FeaturesConfig::Synthetic { layout, .. } => layout.frames as u64,
                FeaturesConfig::Http(_) => 16,
            };
            Ok(synthetic_dataset(
                &exp.classes,
                *train_sequences,
                *val_sequences,
                *test_sequences,
                *clips_per_sequence,
                *clip_frames,
                frames,
                p.config.seed,
            ))
        }
    }
}

fn dataset_hash(p: &Pipeline) -> Result<String> {
    Ok(sha256_hex(&to_jsonl(&dataset(p)?)))
}

pub fn features(p: &Pipeline, exp: &ExperimentConfig, records: Vec<MiniclipRecord>, views: bool) -> Result<FeatureSet> {
    let provider = feature_provider(p, exp)?;
    let view_list = protocol_views();
    let tensors: Vec<Vec<Tensor>> = records
        .par_iter()
        .map(|r| {
            let clip = r.clip();
            let clips: Vec<MiniclipRef> = if views {
                view_list.iter().map(|v| view_clip(&clip, v, r.frame_count)).collect::<privi_core::Result<_>>()?
            } else {
                vec![clip]
            };
            clips.iter().map(|c| Ok(provider.features(c)?.tokens)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let truths = records.iter().map(|r| r.truth(&exp.classes, exp.task)).collect::<Result<_>>()?;
    Ok(FeatureSet { records, views: tensors, truths })
}

fn split(records: &[MiniclipRecord], s: Split) -> Vec<MiniclipRecord> {
    records.iter().filter(|r| r.split == s).cloned().collect()
}

pub(crate) fn stage_inputs(p: &Pipeline, stage: &str) -> Result<BTreeMap<String, String>> {
    let mut m = BTreeMap::new();
    match stage {
        "train-head" | "label-efficiency" => {
            m.insert("dataset".into(), dataset_hash(p)?);
        }
        "eval" => {
            m.insert("dataset".into(), dataset_hash(p)?);
            let rec = p
                .ws
                .stage_record("train-head")?
                .ok_or_else(|| Error::MissingArtifact("trained heads (run `train-head` first)".into()))?;
            m.insert("heads".into(), sha256_hex(&serde_json::to_vec(&rec).expect("in-memory serialization")));
        }
        "jepa-toy" => {
            m.insert("jepa".into(), sha256_hex(&serde_json::to_vec(&jepa_config(p, None)).expect("in-memory serialization")));
        }
        other => return Err(Error::Config(format!("unknown stage '{other}'"))),
    }
    Ok(m)
}

fn metric_name(task: Task) -> &'static str {
    match task {
        Task::SingleLabel => "acc",
        Task::MultiLabel => "map",
    }
}

fn build_report(exp: &ExperimentConfig, preds: &[PredictionRecord]) -> Result<MetricReport> {
    Ok(match exp.task {
        Task::SingleLabel => single_label_report(preds, &exp.classes)?,
        Task::MultiLabel => map_report(preds, exp.classes.len(), &exp.classes)?,
    })
}

fn headline(report: &MetricReport) -> f64 {
    match report.aggregates {
        Aggregates::SingleLabel { acc, .. } => acc,
        Aggregates::MultiLabel { map, .. } => map,
    }
}

fn train_one(exp: &ExperimentConfig, d: usize, seed: u64, train: &[MiniclipSample], val: Option<&[MiniclipSample]>) -> Result<TrainedHead> {
    let cfg = exp.head.classifier(d, exp.classes.len(), exp.task, seed);
    Ok(train_head(&cfg, train, val)?)
}

fn feature_dim(set: &FeatureSet) -> Result<usize> {
    set.views.first().map(|v| v[0].cols()).ok_or_else(|| Error::Core(privi_core::Error::InvalidInput("empty training split".into())))
}

fn compute_train_head(p: &Pipeline) -> Result<Outputs> {
    let exp = experiment(p)?;
    let records = dataset(p)?;
    let train = features(p, exp, split(&records, Split::Train), false)?;
    let val = features(p, exp, split(&records, Split::Val), false)?;
    let d = feature_dim(&train)?;
    let (train_s, val_s) = (train.samples(), val.samples());
    let val_opt = (!val_s.is_empty()).then_some(val_s.as_slice());
    let seeds: Vec<u64> = (0..exp.ensemble as u64).map(|i| p.config.seed.wrapping_add(i)).collect();
    let heads: Vec<TrainedHead> = seeds.par_iter().map(|&s| train_one(exp, d, s, &train_s, val_opt)).collect::<Result<_>>()?;
    let mut out = Outputs::new();
    let mut summary = Vec::new();
    for (i, (h, &seed)) in heads.iter().zip(&seeds).enumerate() {
        out.insert(format!("head_{i}"), encode_classifier(&h.model));
        out.insert(format!("history_{i}"), to_jsonl(&h.history));
        summary.push(HeadSummary {
            seed,
            selected_epoch: h.selected_epoch,
            best_val_metric: h.best_val_metric,
            final_train_loss: h.history.last().map_or(f64::NAN, |r| r.train_loss),
            warnings: h.warnings.clone(),
        });
    }
    out.insert("summary".into(), serde_json::to_vec(&summary).expect("in-memory serialization"));
    Ok(out)
}

/// Loads the ensemble written by `train-head`.
pub fn load_heads(p: &Pipeline) -> Result<Vec<AttentiveClassifier>> {
    let rec = p.ws.stage_record("train-head")?.ok_or_else(|| Error::MissingArtifact("trained heads (run `train-head` first)".into()))?;
    let mut heads = Vec::new();
    for i in 0.. {
        let Some(h) = rec.outputs.get(&format!("head_{i}")) else { break };
        heads.push(decode_classifier(&p.ws.get(h)?, &format!("head_{i}"))?);
    }
    Ok(heads)
}

fn predictions(heads: &[AttentiveClassifier], set: &FeatureSet) -> Result<Vec<PredictionRecord>> {
    set.views
        .par_iter()
        .zip(&set.records)
        .zip(&set.truths)
        .map(|((views, r), t)| {
            let probs = evaluate_protocol(heads, views)?;
            Ok(PredictionRecord { sample_id: r.sample_id.clone(), scores: probs, truth: t.clone() })
        })
        .collect()
}

fn compute_eval(p: &Pipeline) -> Result<Outputs> {
    let exp = experiment(p)?;
    let heads = load_heads(p)?;
    let records = dataset(p)?;
    let test = features(p, exp, split(&records, Split::Test), exp.multi_view)?;
    let preds = predictions(&heads, &test)?;
    let report = build_report(exp, &preds)?;
    Ok([("report".to_string(), report_jsonl(&report)), ("predictions".to_string(), to_jsonl(&preds))].into())
}

fn compute_label_efficiency(p: &Pipeline) -> Result<Outputs> {
    let exp = experiment(p)?;
    let records = dataset(p)?;
    let train = features(p, exp, split(&records, Split::Train), false)?;
    let test = features(p, exp, split(&records, Split::Test), false)?;
    let d = feature_dim(&train)?;
    let samples = train.samples();
    let seq_ids: Vec<String> = samples.iter().map(|s| s.sequence_id.clone()).collect();
    let le = &exp.label_efficiency;
    let subsets = label_efficiency_subsets(&seq_ids, &le.fractions, le.repeats, p.config.seed)?;
    let evaluate = |head: &TrainedHead| -> Result<f64> {
        let preds = predictions(std::slice::from_ref(&head.model), &test)?;
        match exp.task {
            Task::SingleLabel => Ok(accuracy(&preds)?),
            Task::MultiLabel => Ok(headline(&build_report(exp, &preds)?)),
        }
    };
    let mut jobs: Vec<(Option<usize>, u64)> = (0..subsets.len()).map(|i| (Some(i), p.config.seed.wrapping_add(1000 + i as u64))).collect();
    jobs.push((None, p.config.seed.wrapping_add(999)));
    let metrics: Vec<f64> = jobs
        .par_iter()
        .map(|(subset, seed)| {
            let train_s: Vec<MiniclipSample> = match subset {
                Some(i) => subsets[*i].indices.iter().map(|&j| samples[j].clone()).collect(),
                None => samples.clone(),
            };
            evaluate(&train_one(exp, d, *seed, &train_s, None)?)
        })
        .collect::<Result<_>>()?;
    let full_metric = *metrics.last().unwrap();
    let runs: Vec<EfficiencyRun> = subsets
        .iter()
        .zip(&metrics)
        .map(|(s, &metric)| EfficiencyRun {
            fraction: s.fraction,
            repeat: s.repeat,
            sequences: s.sequences.len(),
            samples: s.indices.len(),
            achieved_fraction: s.achieved_fraction,
            metric,
        })
        .collect();
    let mut fractions = le.fractions.clone();
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();
    let mut points = Vec::new();
    for &f in &fractions {
        let vals: Vec<f64> = runs.iter().filter(|r| r.fraction == f).map(|r| r.metric).collect();
        let (mean, ci_low, ci_high) = mean_ci95(&vals)?;
        points.push(CurvePoint { fraction: f, mean, ci_low, ci_high });
    }
    points.push(CurvePoint { fraction: 1.0, mean: full_metric, ci_low: full_metric, ci_high: full_metric });
    let degradation: Vec<f64> = points.iter().map(|pt| full_metric - pt.mean).collect();
    let monotone = degradation.windows(2).all(|w| w[1] <= w[0]);
    let summary = EfficiencySummary { metric: metric_name(exp.task).into(), points: points.clone(), full_metric, degradation, monotone };
    Ok([
        ("runs".to_string(), to_jsonl(&runs)),
        ("curve".to_string(), plot_csv(&points)),
        ("summary".to_string(), serde_json::to_vec(&summary).expect("in-memory serialization")),
    ]
    .into())
}

/// Pretraining config: the `jepa` section or the toy preset, seeded from the
/// pipeline seed, with an optional target-mode override.
pub fn jepa_config(p: &Pipeline, mode: Option<TargetMode>) -> JepaConfig {
    let mut c = p.config.jepa.clone().unwrap_or_else(|| JepaConfig { seed: p.config.seed, ..JepaConfig::toy() });
    if let Some(m) = mode {
        c.target_mode = m;
    }
    c
}

fn compute_jepa(config: &JepaConfig) -> Result<Outputs> {
    let source = SyntheticMotion::new(config.grid, config.in_dim, config.seed);
    let outcome = run_pretrain(config, &source)?;
    let summary = PretrainSummary::from_diagnostics(config.target_mode, &outcome.diagnostics, outcome.aborted.clone());
    Ok([
        ("diagnostics".to_string(), to_jsonl(&outcome.diagnostics)),
        ("checkpoint".to_string(), encode_jepa(&outcome.model)),
        ("summary".to_string(), serde_json::to_vec(&summary).expect("in-memory serialization")),
    ]
    .into())
}

/// Runs an experiment stage through the workspace.
pub fn run_experiment(p: &Pipeline, stage: &str, mode: Option<TargetMode>) -> Result<crate::workspace::RunRecord> {
    match stage {
        "train-head" => p.run_with(stage, |p, _| compute_train_head(p)),
        "eval" => p.run_with(stage, |p, _| compute_eval(p)),
        "label-efficiency" => p.run_with(stage, |p, _| compute_label_efficiency(p)),
        "jepa-toy" => {
            let config = jepa_config(p, mode);
            p.run_with_inputs(
                stage,
                [("jepa".to_string(), sha256_hex(&serde_json::to_vec(&config).expect("in-memory serialization")))].into(),
                |_, _| compute_jepa(&config),
            )
        }
        other => Err(Error::Config(format!("unknown stage '{other}'"))),
    }
}

pub fn read_output<T: for<'de> Deserialize<'de>>(p: &Pipeline, stage: &str, name: &str) -> Result<T> {
    serde_json::from_slice(&p.ws.stage_output(stage, name)?).map_err(|e| Error::format(format!("{stage}/{name}"), e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_frames_are_centered() {
        assert_eq!(even_frames(64, 16), (0..16).map(|k| 2 + 4 * k).collect::<Vec<_>>());
        assert_eq!(even_frames(4, 4), vec![0, 1, 2, 3]);
    }

    #[test]
    fn synthetic_dataset_is_balanced_and_deterministic() {
        let classes: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let d = synthetic_dataset(&classes, 40, 8, 12, 2, 64, 16, 3);
        assert_eq!(d.len(), 2 * (40 + 8 + 12));
        assert_eq!(d, synthetic_dataset(&classes, 40, 8, 12, 2, 64, 16, 3));
        let train: Vec<_> = d.iter().filter(|r| r.split == Split::Train).collect();
        for c in &classes {
            assert_eq!(train.iter().filter(|r| r.label.as_ref() == Some(c)).count(), 20);
        }
        for pair in train.chunks(2) {
            assert_eq!(pair[0].sequence_id, pair[1].sequence_id);
            assert_eq!(pair[0].label, pair[1].label);
        }
    }

    #[test]
    fn truth_lookup() {
        let classes: Vec<String> = vec!["x".into(), "y".into()];
        let mut r = synthetic_dataset(&classes, 2, 0, 0, 1, 16, 4, 0).remove(0);
        assert!(matches!(r.truth(&classes, Task::SingleLabel).unwrap(), Truth::Class(_)));
        r.labels = vec!["y".into()];
        assert_eq!(r.truth(&classes, Task::MultiLabel).unwrap(), Truth::Labels(vec![false, true]));
        r.labels = vec!["z".into()];
        assert!(r.truth(&classes, Task::MultiLabel).is_err());
    }
}
