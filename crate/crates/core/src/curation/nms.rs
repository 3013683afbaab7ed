use alloc::vec::Vec;

use super::types::DetectionBox;

/// Default IoU above which a lower-scoring box is suppressed.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
/// Default minimum detection score.
pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.35;

pub fn iou(a: &DetectionBox, b: &DetectionBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Greedy NMS returning indices of survivors, highest score first. Boxes
/// below `score_threshold` are dropped up front; equal scores keep input order.
pub fn nms_indices(boxes: &[DetectionBox], iou_threshold: f64, score_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).filter(|&i| boxes[i].score >= score_threshold).collect();
    order.sort_by(|&a, &b| boxes[b].score.total_cmp(&boxes[a].score));
    let mut keep: Vec<usize> = Vec::new();
    let mut suppressed = alloc::vec![false; order.len()];
    for i in 0..order.len() {
        if suppressed[i] {
            continue;
        }
        let cur = &boxes[order[i]];
        keep.push(order[i]);
        for j in i + 1..order.len() {
            if !suppressed[j] && iou(cur, &boxes[order[j]]) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

pub fn nms(boxes: &[DetectionBox], iou_threshold: f64, score_threshold: f64) -> Vec<DetectionBox> {
    nms_indices(boxes, iou_threshold, score_threshold).into_iter().map(|i| boxes[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64, s: f64) -> DetectionBox {
        DetectionBox::new(x1, y1, x2, y2, s, "primate")
    }

    #[test]
    fn iou_of_offset_squares() {
        assert!((iou(&b(0., 0., 2., 2., 1.), &b(1., 1., 3., 3., 1.)) - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(iou(&b(0., 0., 1., 1., 1.), &b(2., 2., 3., 3., 1.)), 0.0);
    }

    #[test]
    fn duplicates_collapse_to_best_then_first() {
        let boxes = [b(0., 0., 5., 5., 0.6), b(0., 0., 5., 5., 0.9)];
        assert_eq!(nms_indices(&boxes, 0.5, 0.0), [1]);
        let tied = [b(0., 0., 5., 5., 0.7), b(0., 0., 5., 5., 0.7)];
        assert_eq!(nms_indices(&tied, 0.5, 0.0), [0]);
    }

    #[test]
    fn score_threshold_drops_weak_boxes() {
        let boxes = [b(0., 0., 5., 5., 0.2), b(10., 10., 15., 15., 0.5)];
        assert_eq!(nms_indices(&boxes, 0.5, 0.35), [1]);
    }

    proptest::proptest! {
        #[test]
        fn survivors_are_a_subset_with_low_pairwise_iou(
            raw in proptest::collection::vec((0.0f64..90.0, 0.0f64..90.0, 1.0f64..30.0, 1.0f64..30.0, 0.0f64..1.0), 0..40),
            thr in 0.1f64..0.9,
        ) {
            let boxes: Vec<DetectionBox> = raw.iter().map(|&(x, y, w, h, s)| b(x, y, x + w, y + h, s)).collect();
            let keep = nms(&boxes, thr, 0.0);
            for (i, a) in keep.iter().enumerate() {
                proptest::prop_assert!(boxes.contains(a));
                for c in &keep[i + 1..] {
                    proptest::prop_assert!(iou(a, c) <= thr);
                }
            }
        }
    }
}
