//! The curation pipeline: cuts, chunking, relevance and detection filtering,
//! species assignment, subsampling and manifest assembly.

mod chunk;
mod cuts;
mod detection;
mod manifest;
mod nms;
mod relevance;
mod species;
mod subsample;
mod types;

pub use chunk::{chunk_timeline, SNIPPET_LENGTH_S};
pub use cuts::{content_delta, detect_cuts, hsv_planes, CutDetection, FrameSource, HsvPlanes, DEFAULT_CUT_THRESHOLD, MAX_ANALYSIS_WIDTH};
pub use detection::{apply_detections, filter_by_detection, DetectionOutcome, DetectionParams, KeyframeSource, DEFAULT_PROMPT};
pub use manifest::{build_manifest, CompositionColumn, CompositionReport, Manifest, UNLABELED};
pub use nms::{iou, nms, nms_indices, DEFAULT_IOU_THRESHOLD, DEFAULT_SCORE_THRESHOLD};
pub use relevance::{
    apply_relevance, select_threshold, train_relevance, RelevanceConfig, RelevanceModel, RelevanceReport, ThresholdChoice,
    DEFAULT_MIN_PRECISION,
};
pub use species::{assign_species, GENERIC_LABELS};
pub use subsample::{apply_allocation, kept_counts, subsample, Allocation};
pub use types::{
    snippet_id, validate_sources, CutList, DetectionBox, DiscardReason, Diversity, Frame, Keyframe, Setting, Snippet, SourceDataset,
};
