//! Ensemble and multi-view evaluation, and miniclip sampling geometry.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::AttentiveClassifier;
use crate::error::{contract, Error, Result};
use crate::numerics::Tensor;
use crate::providers::{CropRect, MiniclipRef};

/// Side scale of the two corner views relative to the base crop.
pub const CORNER_CROP_SCALE: f64 = 0.875;
/// Temporal offset of the corner views, in frames.
pub const VIEW_JITTER_FRAMES: i64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corner {
    Center,
    TopLeft,
    BottomRight,
}

/// A deterministic spatial crop and frame offset of a miniclip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub corner: Corner,
    pub scale: f64,
    pub frame_offset: i64,
}

/// The three evaluation views: the full crop, then top-left and
/// bottom-right crops at 87.5 % shifted by −2 and +2 frames.
pub fn protocol_views() -> [View; 3] {
    [
        View { corner: Corner::Center, scale: 1.0, frame_offset: 0 },
        View { corner: Corner::TopLeft, scale: CORNER_CROP_SCALE, frame_offset: -VIEW_JITTER_FRAMES },
        View { corner: Corner::BottomRight, scale: CORNER_CROP_SCALE, frame_offset: VIEW_JITTER_FRAMES },
    ]
}

/// Applies `view` to a miniclip of a video with `frame_count` frames.
/// Shifted frame indices are clamped to the video.
pub fn view_clip(clip: &MiniclipRef, view: &View, frame_count: u64) -> Result<MiniclipRef> {
    contract!(frame_count > 0, "video has no frames");
    contract!(view.scale > 0.0 && view.scale <= 1.0, "view scale {} outside (0, 1]", view.scale);
    let c = clip.crop;
    let (w, h) = (c.width() * view.scale, c.height() * view.scale);
    let (x1, y1) = match view.corner {
        Corner::Center => (c.x1 + 0.5 * (c.width() - w), c.y1 + 0.5 * (c.height() - h)),
        Corner::TopLeft => (c.x1, c.y1),
        Corner::BottomRight => (c.x2 - w, c.y2 - h),
    };
    let last = frame_count as i64 - 1;
    let frames = clip.frames.iter().map(|&f| (f as i64 + view.frame_offset).clamp(0, last) as u64).collect();
    Ok(MiniclipRef { clip_ref: clip.clip_ref.clone(), frames, crop: CropRect { x1, y1, x2: x1 + w, y2: y1 + h }, label_hint: clip.label_hint.clone() })
}

/// Element-wise mean of probability vectors.
pub fn average_predictions(preds: &[Vec<f64>]) -> Result<Vec<f64>> {
    contract!(!preds.is_empty(), "nothing to average");
    let c = preds[0].len();
    contract!(preds.iter().all(|p| p.len() == c), "prediction vectors differ in length");
    let mut out = alloc::vec![0.0; c];
    for p in preds {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    let n = preds.len() as f64;
    for o in out.iter_mut() {
        *o /= n;
    }
    Ok(out)
}

/// Averages the probabilities of every classifier on every view's tokens.
pub fn evaluate_protocol(classifiers: &[AttentiveClassifier], views: &[Tensor]) -> Result<Vec<f64>> {
    contract!(!classifiers.is_empty() && !views.is_empty(), "need at least one classifier and one view");
    let first = &classifiers[0].config;
    contract!(classifiers.iter().all(|c| c.config.same_architecture(first)), "ensemble classifiers have mismatched configs");
    let mut preds = Vec::with_capacity(classifiers.len() * views.len());
    for clf in classifiers {
        for v in views {
            preds.push(clf.predict(v)?);
        }
    }
    average_predictions(&preds)
}

/// Per-frame boxes of one tracked individual, starting at `start_frame`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub clip_ref: String,
    pub video_frames: u64,
    pub frame_width: f64,
    pub frame_height: f64,
    pub start_frame: u64,
    pub boxes: Vec<CropRect>,
    pub label: Option<String>,
}

/// A `clip_len`-frame window centered on `frame_j` (shifted to fit the
/// video), `out_frames` indices `start + ⌊k·L/out + L/(2·out)⌋`, and the box
/// at `frame_j` grown by `padding` times its size per axis, clamped to the frame.
pub fn sample_miniclip_chimpact(track: &Track, frame_j: u64, clip_len: u64, out_frames: u64, padding: f64) -> Result<MiniclipRef> {
    if track.boxes.is_empty() || track.video_frames == 0 {
        return Err(Error::InvalidInput(alloc::format!("track {} has no frames", track.clip_ref)));
    }
    contract!(clip_len > 0 && out_frames > 0 && out_frames <= clip_len, "bad clip geometry {} / {}", clip_len, out_frames);
    contract!(padding >= 0.0, "padding must be non-negative");
    let end = track.start_frame + track.boxes.len() as u64;
    contract!((track.start_frame..end).contains(&frame_j), "frame {} outside track {}..{}", frame_j, track.start_frame, end);
    contract!(end <= track.video_frames, "track extends past the video");
    let start = frame_j.saturating_sub(clip_len / 2).min(track.video_frames.saturating_sub(clip_len));
    let last = track.video_frames - 1;
    let frames = (0..out_frames).map(|k| (start + ((2 * k + 1) * clip_len) / (2 * out_frames)).min(last)).collect();
    let b = track.boxes[(frame_j - track.start_frame) as usize];
    let (pw, ph) = (0.5 * padding * b.width(), 0.5 * padding * b.height());
    let crop = CropRect {
        x1: (b.x1 - pw).max(0.0),
        y1: (b.y1 - ph).max(0.0),
        x2: (b.x2 + pw).min(track.frame_width),
        y2: (b.y2 + ph).min(track.frame_height),
    };
    Ok(MiniclipRef { clip_ref: track.clip_ref.clone(), frames, crop, label_hint: track.label.clone() })
}
