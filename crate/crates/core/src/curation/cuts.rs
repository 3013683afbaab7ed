//! Content-delta hard-cut detection on downscaled HSV frames.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::types::{CutList, Frame};
use crate::error::{contract, Result};

/// Default threshold on the 0–255 channel scale.
pub const DEFAULT_CUT_THRESHOLD: f64 = 27.0;

/// Frames are box-downscaled until at most this wide before comparison.
pub const MAX_ANALYSIS_WIDTH: u32 = 256;

/// Random-access frames of one video.
pub trait FrameSource {
    fn frame_count(&self) -> usize;
    fn fps(&self) -> f64;
    fn frame(&self, index: usize) -> Result<Frame>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutDetection {
    pub cuts: CutList,
    /// Content delta per frame index (0 for the first readable frame and for
    /// unreadable frames).
    pub deltas: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Hue (OpenCV 0–179 scale), saturation and value planes of a frame, after
/// integer box downscaling.
#[derive(Debug, Clone, PartialEq)]
pub struct HsvPlanes {
    pub width: usize,
    pub height: usize,
    pub h: Vec<f64>,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let v = max;
    let s = if max > 0.0 { 255.0 * (max - min) / max } else { 0.0 };
    let h = if max == min {
        0.0
    } else if max == r {
        60.0 * (g - b) / (max - min)
    } else if max == g {
        120.0 + 60.0 * (b - r) / (max - min)
    } else {
        240.0 + 60.0 * (r - g) / (max - min)
    };
    let h = if h < 0.0 { h + 360.0 } else { h };
    (h / 2.0, s, v)
}

pub fn hsv_planes(frame: &Frame) -> HsvPlanes {
    let (w, h) = (frame.width as usize, frame.height as usize);
    let factor = (frame.width.div_ceil(MAX_ANALYSIS_WIDTH)) as usize;
    let (ow, oh) = (w.div_ceil(factor), h.div_ceil(factor));
    let mut acc = alloc::vec![[0.0f64; 4]; ow * oh];
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) * 3;
            let p = &frame.rgb[i..i + 3];
            let cell = &mut acc[(y / factor) * ow + x / factor];
            cell[0] += p[0] as f64;
            cell[1] += p[1] as f64;
            cell[2] += p[2] as f64;
            cell[3] += 1.0;
        }
    }
    let mut planes = HsvPlanes { width: ow, height: oh, h: Vec::new(), s: Vec::new(), v: Vec::new() };
    for c in acc {
        let (hh, ss, vv) = rgb_to_hsv(c[0] / c[3], c[1] / c[3], c[2] / c[3]);
        planes.h.push(hh);
        planes.s.push(ss);
        planes.v.push(vv);
    }
    planes
}

/// Mean over the three channels of the mean absolute per-pixel difference.
pub fn content_delta(a: &HsvPlanes, b: &HsvPlanes) -> Result<f64> {
    contract!(a.width == b.width && a.height == b.height, "frame size changed mid-video");
    let mad = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>() / x.len() as f64;
    Ok((mad(&a.h, &b.h) + mad(&a.s, &b.s) + mad(&a.v, &b.v)) / 3.0)
}

/// Declares a cut at every frame whose content delta against the previous
/// readable frame exceeds `threshold`. Unreadable frames are skipped with a
/// warning and never produce a cut by themselves.
pub fn detect_cuts(source: &dyn FrameSource, video_ref: &str, threshold: f64) -> Result<CutDetection> {
    let n = source.frame_count();
    contract!(n >= 2, "cut detection needs at least 2 frames, got {}", n);
    contract!(threshold.is_finite() && threshold >= 0.0, "bad cut threshold {}", threshold);
    let mut cuts = Vec::new();
    let mut deltas = alloc::vec![0.0; n];
    let mut warnings = Vec::new();
    let mut prev: Option<HsvPlanes> = None;
    for (i, delta) in deltas.iter_mut().enumerate() {
        let frame = match source.frame(i) {
            Ok(f) => f,
            Err(e) => {
                warnings.push(format!("{video_ref}: skipping unreadable frame {i}: {e}"));
                continue;
            }
        };
        let planes = hsv_planes(&frame);
        if let Some(p) = &prev {
            match content_delta(p, &planes) {
                Ok(d) => {
                    *delta = d;
                    if d > threshold {
                        cuts.push(i as u64);
                    }
                }
                Err(e) => {
                    warnings.push(format!("{video_ref}: skipping frame {i}: {e}"));
                    continue;
                }
            }
        }
        prev = Some(planes);
    }
    Ok(CutDetection { cuts: CutList { video_ref: video_ref.into(), cuts, fps: source.fps() }, deltas, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    struct Synthetic<F: Fn(usize) -> Option<Frame>> {
        n: usize,
        f: F,
    }

    impl<F: Fn(usize) -> Option<Frame>> FrameSource for Synthetic<F> {
        fn frame_count(&self) -> usize {
            self.n
        }
        fn fps(&self) -> f64 {
            25.0
        }
        fn frame(&self, i: usize) -> Result<Frame> {
            (self.f)(i).ok_or_else(|| Error::InvalidInput("corrupt".into()))
        }
    }

    #[test]
    fn constant_video_has_no_cuts() {
        let src = Synthetic { n: 40, f: |_| Some(Frame::solid(32, 16, [90, 140, 30])) };
        let d = detect_cuts(&src, "v", DEFAULT_CUT_THRESHOLD).unwrap();
        assert!(d.cuts.cuts.is_empty());
    }

    #[test]
    fn black_to_white_single_cut() {
        let src = Synthetic { n: 100, f: |i| Some(Frame::solid(32, 16, if i < 50 { [0; 3] } else { [255; 3] })) };
        let d = detect_cuts(&src, "v", DEFAULT_CUT_THRESHOLD).unwrap();
        assert_eq!(d.cuts.cuts, [50]);
    }

    #[test]
    fn linear_fade_is_not_a_cut() {
        // Luma steps of 2 or 3 levels per frame give channel-averaged deltas of at most 1.
        let src = Synthetic { n: 100, f: |i| Some(Frame::solid(32, 16, [(i as f64 * 2.55) as u8; 3])) };
        let d = detect_cuts(&src, "v", DEFAULT_CUT_THRESHOLD).unwrap();
        assert!(d.cuts.cuts.is_empty());
        assert!(d.deltas.iter().all(|&x| x <= 1.0));
    }

    #[test]
    fn unreadable_frames_are_skipped_without_phantom_cuts() {
        let src = Synthetic { n: 20, f: |i| if i == 7 || i == 8 { None } else { Some(Frame::solid(8, 8, [10, 200, 10])) } };
        let d = detect_cuts(&src, "v", DEFAULT_CUT_THRESHOLD).unwrap();
        assert!(d.cuts.cuts.is_empty());
        assert_eq!(d.warnings.len(), 2);
    }

    #[test]
    fn wide_frames_are_downscaled() {
        let p = hsv_planes(&Frame::solid(1000, 10, [1, 2, 3]));
        assert!(p.width <= MAX_ANALYSIS_WIDTH as usize);
        assert_eq!(p.width, 250);
    }

    #[test]
    fn too_few_frames_is_contract_error() {
        let src = Synthetic { n: 1, f: |_| Some(Frame::solid(2, 2, [0; 3])) };
        assert!(detect_cuts(&src, "v", 27.0).is_err());
    }
}
