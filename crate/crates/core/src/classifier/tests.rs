use alloc::string::String;
use alloc::vec::Vec;

use super::*;
use crate::numerics::LrSchedule;
use crate::metrics::Truth;
use crate::numerics::gradcheck::check;
use crate::numerics::{loss, Bound};
use crate::providers::{CropRect, FeatureProvider, MiniclipRef, SyntheticFeatures, TokenLayout};

fn small(task: Task, classes: usize) -> ClassifierConfig {
    ClassifierConfig { d_prime: 16, heads: 4, layers: 2, ..ClassifierConfig::new(24, classes, task) }
}

fn tokens(n: usize, d: usize, seed: u64) -> Tensor {
    Tensor::randn(&[n, d], 1.0, &mut RngSeed::new(seed, 3).rng())
}

#[test]
fn parameter_count_matches_closed_form() {
    for &(d, dp, l, c) in &[(24, 16, 2, 3), (32, 8, 1, 5), (1024, 64, 3, 23), (1024, 64, 1, 9)] {
        let cfg = ClassifierConfig { d_prime: dp, heads: if dp % 8 == 0 { 8 } else { 4 }, layers: l, ..ClassifierConfig::new(d, c, Task::SingleLabel) };
        let m = AttentiveClassifier::new(cfg).unwrap();
        assert_eq!(m.param_count(), param_count(d, dp, l, c));
    }
    assert_eq!(param_count(1024, 64, 3, 23), 2048 + 65_600 + 3 * 49_984 + 129 * 23);
    assert_eq!(param_count(1024, 64, 1, 9), 118_793);
}

#[test]
fn single_label_probabilities_sum_to_one() {
    let m = AttentiveClassifier::new(small(Task::SingleLabel, 5)).unwrap();
    let p = m.predict(&tokens(7, 24, 1)).unwrap();
    assert_eq!(p.len(), 5);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
}

#[test]
fn multi_label_probabilities_are_independent() {
    let m = AttentiveClassifier::new(small(Task::MultiLabel, 4)).unwrap();
    let out = m.forward(&tokens(7, 24, 1)).unwrap();
    for (z, p) in out.logits.iter().zip(&out.probs) {
        assert!(*p > 0.0 && *p < 1.0);
        assert!((p - 1.0 / (1.0 + libm::exp(-z))).abs() < 1e-15);
    }
}

#[test]
fn patch_token_permutation_leaves_output_unchanged() {
    let m = AttentiveClassifier::new(small(Task::SingleLabel, 3)).unwrap();
    let x = tokens(9, 24, 2);
    let mut perm: Vec<usize> = (0..9).collect();
    RngSeed::new(4, 0).rng().shuffle(&mut perm);
    let rows: Vec<Vec<f64>> = perm.iter().map(|&i| x.row(i).to_vec()).collect();
    let y = Tensor::from_rows(&rows).unwrap();
    let (a, b) = (m.predict(&x).unwrap(), m.predict(&y).unwrap());
    for (p, q) in a.iter().zip(&b) {
        assert!((p - q).abs() < 1e-5);
    }
}

#[test]
fn token_width_mismatch_is_contract_error() {
    let m = AttentiveClassifier::new(small(Task::SingleLabel, 3)).unwrap();
    assert!(matches!(m.predict(&tokens(4, 23, 0)), Err(crate::Error::Contract(_))));
}

#[test]
fn config_invariants() {
    let bad = [
        ClassifierConfig { classes: 1, ..small(Task::SingleLabel, 2) },
        ClassifierConfig { layers: 0, ..small(Task::SingleLabel, 2) },
        ClassifierConfig { d_prime: 18, heads: 4, ..small(Task::SingleLabel, 2) },
        ClassifierConfig { loss: LossKind::Bce, ..small(Task::SingleLabel, 2) },
    ];
    for cfg in bad {
        assert!(AttentiveClassifier::new(cfg).is_err());
    }
}

#[test]
fn full_forward_matches_finite_differences() {
    let m = AttentiveClassifier::new(ClassifierConfig { d_prime: 8, heads: 2, layers: 1, ..ClassifierConfig::new(10, 3, Task::SingleLabel) }).unwrap();
    let x = tokens(4, 10, 9);
    let errs = check(m.params.tensors(), |g, vars| {
        let p = Bound::from_vars(vars.to_vec());
        let z = m.logits_graph(g, &p, &x).unwrap();
        loss::cross_entropy(g, z, 1).unwrap()
    });
    for (name, e) in m.param_names().iter().zip(&errs) {
        assert!(*e < 1e-3, "{name}: {e}");
    }
}

fn synthetic_task(n: usize, classes: &[&str], seed: u64) -> (ClassifierConfig, Vec<MiniclipSample>) {
    let layout = TokenLayout { frames: 2, height: 32, width: 32, tubelet: 2, patch: 16 };
    let fp = SyntheticFeatures::new(seed, layout, 16, classes, 1.0, 1.0).unwrap();
    let samples = (0..n)
        .map(|i| {
            let c = i % classes.len();
            let clip = MiniclipRef {
                clip_ref: alloc::format!("clip{i}"),
                frames: (0..16).collect(),
                crop: CropRect { x1: 0.0, y1: 0.0, x2: 32.0, y2: 32.0 },
                label_hint: Some(classes[c].into()),
            };
            MiniclipSample {
                sample_id: clip.clip_ref.clone(),
                tokens: fp.features(&clip).unwrap().tokens,
                truth: Truth::Class(c),
                sequence_id: alloc::format!("seq{i}"),
                view_id: 0,
            }
        })
        .collect();
    let cfg = ClassifierConfig { d_prime: 16, heads: 4, layers: 1, epochs: 20, batch_size: 16, ..ClassifierConfig::new(16, classes.len(), Task::SingleLabel) };
    (cfg, samples)
}

#[test]
fn training_learns_separable_task_and_logs_schedule() {
    let (cfg, samples) = synthetic_task(120, &["a", "b", "c", "d"], 1);
    let (train, val) = samples.split_at(80);
    let out = train_head(&cfg, train, Some(val)).unwrap();
    assert!(out.best_val_metric.unwrap() >= 0.95, "val acc {:?}", out.best_val_metric);
    let schedule = LrSchedule::WarmupCosine { base_lr: 1e-3, warmup_steps: 10, total_steps: 100, final_lr_fraction: 0.0 };
    assert_eq!(out.history.len(), 100);
    for (i, h) in out.history.iter().enumerate() {
        assert_eq!(h.step, i as u64);
        assert_eq!(h.lr, schedule.lr_at(h.step));
    }
    let logged: Vec<f64> = out.history.iter().filter_map(|h| h.val_metric).collect();
    assert_eq!(logged.len(), cfg.epochs);
    assert!(logged.iter().all(|m| *m <= out.best_val_metric.unwrap()));
    assert_eq!(validation_metric_of(&out.model, val), out.best_val_metric.unwrap());
}

fn validation_metric_of(m: &AttentiveClassifier, val: &[MiniclipSample]) -> f64 {
    train::validation_metric(m, val).unwrap()
}

#[test]
fn identical_seeds_give_identical_weights() {
    let (cfg, samples) = synthetic_task(40, &["a", "b"], 2);
    let cfg = ClassifierConfig { epochs: 2, ..cfg };
    let a = train_head(&cfg, &samples, None).unwrap();
    let b = train_head(&cfg, &samples, None).unwrap();
    assert_eq!(a.model.params.flatten(), b.model.params.flatten());
    assert_eq!(a.history, b.history);
}

#[test]
fn empty_class_warns_but_trains() {
    let (cfg, samples) = synthetic_task(20, &["a", "b", "c"], 3);
    let only_ab: Vec<MiniclipSample> = samples.into_iter().filter(|s| s.truth != Truth::Class(2)).collect();
    let out = train_head(&ClassifierConfig { epochs: 1, ..cfg }, &only_ab, None).unwrap();
    assert_eq!(out.warnings.len(), 1);
}

#[test]
fn eql_and_bce_train_multi_label() {
    let (cfg, samples) = synthetic_task(24, &["a", "b", "c"], 4);
    let multi: Vec<MiniclipSample> = samples
        .into_iter()
        .map(|mut s| {
            let c = match s.truth {
                Truth::Class(c) => c,
                Truth::Labels(_) => unreachable!(),
            };
            s.truth = Truth::Labels((0..3).map(|k| k == c || k == (c + 1) % 3).collect());
            s
        })
        .collect();
    for loss in [LossKind::Bce, LossKind::Eql] {
        let cfg = ClassifierConfig { task: Task::MultiLabel, loss, epochs: 2, ..cfg.clone() };
        let out = train_head(&cfg, &multi[..16], Some(&multi[16..])).unwrap();
        assert!(out.best_val_metric.is_some());
    }
}

#[test]
fn ensemble_of_identical_heads_equals_single_forward() {
    let m = AttentiveClassifier::new(small(Task::SingleLabel, 4)).unwrap();
    let x = tokens(6, 24, 5);
    let single = m.predict(&x).unwrap();
    let heads: Vec<AttentiveClassifier> = (0..5).map(|_| m.clone()).collect();
    let views = [x.clone(), x.clone(), x];
    let avg = evaluate_protocol(&heads, &views).unwrap();
    for (a, b) in avg.iter().zip(&single) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((avg.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn hand_computed_two_by_two_average() {
    let avg = average_predictions(&[alloc::vec![0.2, 0.8], alloc::vec![0.6, 0.4], alloc::vec![0.5, 0.5], alloc::vec![0.1, 0.9]]).unwrap();
    assert!((avg[0] - 0.35).abs() < 1e-15 && (avg[1] - 0.65).abs() < 1e-15);
}

#[test]
fn mismatched_ensemble_is_rejected() {
    let a = AttentiveClassifier::new(small(Task::SingleLabel, 4)).unwrap();
    let b = AttentiveClassifier::new(small(Task::SingleLabel, 3)).unwrap();
    assert!(matches!(evaluate_protocol(&[a, b], &[tokens(3, 24, 0)]), Err(crate::Error::Contract(_))));
}

fn track(start: u64, len: usize, video: u64) -> Track {
    Track {
        clip_ref: String::from("v"),
        video_frames: video,
        frame_width: 100.0,
        frame_height: 80.0,
        start_frame: start,
        boxes: alloc::vec![CropRect { x1: 10.0, y1: 20.0, x2: 30.0, y2: 60.0 }; len],
        label: None,
    }
}

#[test]
fn miniclip_at_video_start_clamps_window() {
    let c = sample_miniclip_chimpact(&track(0, 10, 500), 3, 64, 16, 0.0).unwrap();
    let expect: Vec<u64> = (0..16).map(|k| 4 * k + 2).collect();
    assert_eq!(c.frames, expect);
    assert_eq!(c.crop, CropRect { x1: 10.0, y1: 20.0, x2: 30.0, y2: 60.0 });
}

#[test]
fn miniclip_indices_follow_uniform_rule() {
    for j in [40u64, 100, 250, 499] {
        let c = sample_miniclip_chimpact(&track(0, 500, 500), j, 64, 16, 0.5).unwrap();
        assert_eq!(c.frames.len(), 16);
        assert!(c.frames.windows(2).all(|w| w[0] < w[1]));
        assert!(c.frames.iter().all(|&f| f < 500));
        let start = c.frames[0] - 2;
        assert_eq!(c.frames, (0..16).map(|k| start + 4 * k + 2).collect::<Vec<_>>());
        assert!(start <= j && j < start + 64);
    }
    let c = sample_miniclip_chimpact(&track(0, 500, 500), 250, 64, 16, 0.5).unwrap();
    assert_eq!(c.crop, CropRect { x1: 5.0, y1: 10.0, x2: 35.0, y2: 70.0 });
    let c = sample_miniclip_chimpact(&track(0, 500, 500), 250, 64, 16, 4.0).unwrap();
    assert_eq!(c.crop, CropRect { x1: 0.0, y1: 0.0, x2: 70.0, y2: 80.0 });
}

#[test]
fn empty_track_is_rejected() {
    assert!(sample_miniclip_chimpact(&track(0, 0, 100), 0, 64, 16, 0.0).is_err());
    assert!(sample_miniclip_chimpact(&track(5, 3, 100), 9, 64, 16, 0.0).is_err());
}

#[test]
fn views_are_deterministic_and_inside_base_crop() {
    let base = sample_miniclip_chimpact(&track(0, 200, 200), 100, 64, 16, 0.5).unwrap();
    for v in protocol_views() {
        let a = view_clip(&base, &v, 200).unwrap();
        assert_eq!(a, view_clip(&base, &v, 200).unwrap());
        assert!(base.crop.contains(&a.crop, 1e-9));
        assert_eq!(a.frames[0] as i64, base.frames[0] as i64 + v.frame_offset);
    }
}

