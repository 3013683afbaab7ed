//! Detection filtering: prompt the detector on each keyframe, suppress
//! duplicates and discard snippets without any surviving box.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::nms::{nms, DEFAULT_IOU_THRESHOLD, DEFAULT_SCORE_THRESHOLD};
use super::types::{DetectionBox, DiscardReason, Keyframe, Snippet};
use crate::error::{Error, Result};
use crate::providers::DetectorProvider;

pub const DEFAULT_PROMPT: &str = "primate";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionParams {
    pub prompt: String,
    pub score_threshold: f64,
    pub iou_threshold: f64,
}

impl Default for DetectionParams {
    fn default() -> Self {
        Self { prompt: DEFAULT_PROMPT.into(), score_threshold: DEFAULT_SCORE_THRESHOLD, iou_threshold: DEFAULT_IOU_THRESHOLD }
    }
}

/// Supplies the center frame of a snippet.
pub trait KeyframeSource {
    fn keyframe(&self, snippet: &Snippet) -> Result<Keyframe>;
}

/// Snippets whose detection could not be obtained and must be retried.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub processed: usize,
    pub discarded: usize,
    pub pending: Vec<String>,
}

/// Validates raw detector output against the frame and stores the NMS
/// survivors. Returns whether the snippet was discarded.
pub fn apply_detections(
    snippet: &mut Snippet,
    raw: &[DetectionBox],
    frame_width: u32,
    frame_height: u32,
    params: &DetectionParams,
) -> Result<bool> {
    for b in raw {
        b.validate(frame_width as f64, frame_height as f64)
            .map_err(|e| Error::ProviderSchema(alloc::format!("detector returned invalid box for {}: {e}", snippet.snippet_id)))?;
    }
    snippet.boxes = nms(raw, params.iou_threshold, params.score_threshold);
    if snippet.boxes.is_empty() {
        snippet.discard(DiscardReason::NoDetection);
        return Ok(true);
    }
    Ok(false)
}

/// Runs the detector on every kept snippet. Provider outages leave the
/// snippet untouched and list it as pending; malformed responses abort.
pub fn filter_by_detection(
    snippets: &mut [Snippet],
    keyframes: &dyn KeyframeSource,
    detector: &dyn DetectorProvider,
    params: &DetectionParams,
) -> Result<DetectionOutcome> {
    let mut out = DetectionOutcome::default();
    for s in snippets.iter_mut().filter(|s| s.kept) {
        let kf = match keyframes.keyframe(s) {
            Ok(kf) => kf,
            Err(Error::ProviderUnavailable(_)) => {
                out.pending.push(s.snippet_id.clone());
                continue;
            }
            Err(e) => return Err(e),
        };
        match detector.detect(&kf, &params.prompt) {
            Ok(raw) => {
                out.processed += 1;
                if apply_detections(s, &raw, kf.frame.width, kf.frame.height, params)? {
                    out.discarded += 1;
                }
            }
            Err(Error::ProviderUnavailable(_)) => out.pending.push(s.snippet_id.clone()),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curation::types::Frame;
    use crate::providers::{RelativeBox, SyntheticDetector};

    struct Solid;

    impl KeyframeSource for Solid {
        fn keyframe(&self, s: &Snippet) -> Result<Keyframe> {
            Ok(Keyframe { snippet_id: s.snippet_id.clone(), frame: Frame::solid(64, 48, [0, 0, 0]), label_hint: None })
        }
    }

    struct Down;

    impl DetectorProvider for Down {
        fn detect(&self, _: &Keyframe, _: &str) -> Result<Vec<DetectionBox>> {
            Err(Error::ProviderUnavailable("timeout".into()))
        }
    }

    fn snippets() -> Vec<Snippet> {
        (0..4).map(|i| Snippet::new("a", "v", 2.0 * i as f64, 2.0 * i as f64 + 3.0)).collect()
    }

    fn rel(x1: f64, score: f64) -> RelativeBox {
        RelativeBox { x1, y1: 0.2, x2: x1 + 0.5, y2: 0.8, score, label: "primate".into() }
    }

    #[test]
    fn empty_detector_discards_all() {
        let mut s = snippets();
        let out = filter_by_detection(&mut s, &Solid, &SyntheticDetector::empty(), &DetectionParams::default()).unwrap();
        assert_eq!(out.discarded, 4);
        assert!(s.iter().all(|s| s.discard_reason == Some(DiscardReason::NoDetection)));
    }

    #[test]
    fn single_box_passes_through() {
        let mut s = snippets();
        filter_by_detection(&mut s, &Solid, &SyntheticDetector::single(0.9, "primate"), &DetectionParams::default()).unwrap();
        assert!(s.iter().all(|s| s.kept && s.boxes.len() == 1));
    }

    #[test]
    fn overlapping_boxes_collapse_to_one() {
        let det = SyntheticDetector::constant(alloc::vec![rel(0.10, 0.8), rel(0.12, 0.9), rel(0.14, 0.7)]);
        let mut s = snippets();
        filter_by_detection(&mut s, &Solid, &det, &DetectionParams::default()).unwrap();
        assert!(s.iter().all(|s| s.boxes.len() == 1 && s.boxes[0].score == 0.9));
    }

    #[test]
    fn outage_leaves_snippets_pending() {
        let mut s = snippets();
        let before = s.clone();
        let out = filter_by_detection(&mut s, &Solid, &Down, &DetectionParams::default()).unwrap();
        assert_eq!(out.pending.len(), 4);
        assert_eq!(s, before);
    }

    #[test]
    fn out_of_frame_box_is_schema_error() {
        let det = SyntheticDetector::constant(alloc::vec![RelativeBox { x1: 0.5, y1: 0.5, x2: 1.5, y2: 0.9, score: 0.9, label: "primate".into() }]);
        let mut s = snippets();
        assert!(matches!(filter_by_detection(&mut s, &Solid, &det, &DetectionParams::default()), Err(Error::ProviderSchema(_))));
    }

    #[test]
    fn rerun_is_idempotent() {
        let det = SyntheticDetector::single(0.9, "primate");
        let mut s = snippets();
        s[1].discard(DiscardReason::Irrelevant);
        filter_by_detection(&mut s, &Solid, &det, &DetectionParams::default()).unwrap();
        let once = s.clone();
        filter_by_detection(&mut s, &Solid, &det, &DetectionParams::default()).unwrap();
        assert_eq!(s, once);
        assert!(s[1].boxes.is_empty());
    }
}
