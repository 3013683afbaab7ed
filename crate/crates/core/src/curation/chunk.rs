use alloc::vec::Vec;

use super::types::Snippet;
use crate::error::{contract, Result};

/// Default snippet length in seconds.
pub const SNIPPET_LENGTH_S: f64 = 3.0;

const EPS: f64 = 1e-9;

/// Splits a video timeline into fixed-length snippets. Each cut-free
/// segment is chunked independently with starts at `segment_start + k·stride`;
/// windows that would cross a cut or run past the segment end are never
/// produced. Cut times are in seconds.
pub fn chunk_timeline(
    source_id: &str,
    video_ref: &str,
    duration_s: f64,
    cut_times_s: &[f64],
    length_s: f64,
    stride_s: f64,
) -> Result<Vec<Snippet>> {
    contract!(length_s > 0.0, "snippet length must be positive");
    contract!(stride_s > 0.0 && stride_s <= length_s, "stride {} must lie in (0, {}]", stride_s, length_s);
    contract!(duration_s.is_finite() && duration_s >= 0.0, "bad duration {}", duration_s);
    let mut bounds: Vec<f64> = cut_times_s.iter().copied().filter(|&t| t > 0.0 && t < duration_s).collect();
    bounds.sort_by(f64::total_cmp);
    bounds.dedup();
    bounds.insert(0, 0.0);
    bounds.push(duration_s);
    let mut out = Vec::new();
    for seg in bounds.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let mut k = 0u64;
        loop {
            let start = a + k as f64 * stride_s;
            let end = start + length_s;
            if end > b + EPS {
                break;
            }
            out.push(Snippet::new(source_id, video_ref, start, end));
            k += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn starts(v: &[Snippet]) -> Vec<f64> {
        v.iter().map(|s| s.start_s).collect()
    }

    #[test]
    fn nine_seconds_no_cuts() {
        let s = chunk_timeline("src", "v", 9.0, &[], 3.0, 2.0).unwrap();
        assert_eq!(starts(&s), [0.0, 2.0, 4.0, 6.0]);
        assert!(s.iter().all(|x| x.keyframe_time_s == x.start_s + 1.5));
    }

    #[test]
    fn exactly_one_window() {
        let s = chunk_timeline("src", "v", 3.0, &[], 3.0, 2.0).unwrap();
        assert_eq!(starts(&s), [0.0]);
        assert_eq!(s[0].end_s, 3.0);
    }

    #[test]
    fn cut_splits_segments() {
        // Segment [0,5): windows at 0, 2 (4 would end at 7). Segment [5,10): 5, 7.
        let s = chunk_timeline("src", "v", 10.0, &[5.0], 3.0, 2.0).unwrap();
        assert_eq!(starts(&s), [0.0, 2.0, 5.0, 7.0]);
        assert!(s.iter().all(|x| x.end_s <= 5.0 || x.start_s >= 5.0));
    }

    #[test]
    fn short_video_is_empty() {
        assert!(chunk_timeline("src", "v", 2.9, &[], 3.0, 2.0).unwrap().is_empty());
    }

    #[test]
    fn bad_stride_rejected() {
        assert!(chunk_timeline("src", "v", 9.0, &[], 3.0, 0.0).is_err());
        assert!(chunk_timeline("src", "v", 9.0, &[], 3.0, 3.5).is_err());
    }

    proptest::proptest! {
        #[test]
        fn no_snippet_spans_a_cut(duration in 0.0f64..60.0, cuts in proptest::collection::vec(0.0f64..60.0, 0..6), stride in 1.0f64..3.0) {
            let s = chunk_timeline("src", "v", duration, &cuts, 3.0, stride).unwrap();
            for sn in &s {
                proptest::prop_assert!(sn.end_s <= duration + 1e-9);
                for &c in &cuts {
                    proptest::prop_assert!(!(sn.start_s < c - 1e-9 && sn.end_s > c + 1e-9));
                }
            }
        }
    }
}
