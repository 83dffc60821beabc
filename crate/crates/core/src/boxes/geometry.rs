use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dataset::BoundingBox;

use super::DetectionSource;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub score: f64,
    pub source: DetectionSource,
}

impl Detection {
    pub fn new(bbox: BoundingBox, score: f64, source: DetectionSource) -> Self {
        let score = score.clamp(0.0, 1.0);
        Self {
            bbox: BoundingBox { score, ..bbox },
            score,
            source,
        }
    }
}

/// Intersection over union on continuous areas.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let iy = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Score descending, then x, y, w, h ascending.
fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.x.total_cmp(&b.bbox.x))
        .then(a.bbox.y.total_cmp(&b.bbox.y))
        .then(a.bbox.w.total_cmp(&b.bbox.w))
        .then(a.bbox.h.total_cmp(&b.bbox.h))
}

/// Greedy non-maximum suppression: walk detections in rank order and keep one
/// unless it overlaps an already kept detection with IoU ≥ `iou_threshold`.
/// Output is in rank order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<Detection> = dets.to_vec();
    order.sort_by(rank_order);
    let mut kept: Vec<Detection> = Vec::with_capacity(order.len());
    for d in order {
        if kept.iter().all(|k| iou(&k.bbox, &d.bbox) < iou_threshold) {
            kept.push(d);
        }
    }
    kept
}

/// Keeps detections scoring at least `min_score`, preserving order.
pub fn filter_detections(dets: &[Detection], min_score: f64) -> Vec<Detection> {
    dets.iter().copied().filter(|d| d.score >= min_score).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x: f64, y: f64, w: f64, h: f64, score: f64) -> Detection {
        Detection::new(BoundingBox::new(x, y, w, h), score, DetectionSource::External)
    }

    #[test]
    fn iou_hand_geometry() {
        let a = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BoundingBox::new(5.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert!((iou(&a, &b) - 50.0 / 150.0).abs() < 1e-15);
        assert_eq!(iou(&a, &BoundingBox::new(20.0, 20.0, 3.0, 3.0)), 0.0);
        // touching edges do not intersect
        assert_eq!(iou(&a, &BoundingBox::new(10.0, 0.0, 3.0, 3.0)), 0.0);
    }

    #[test]
    fn nms_single_and_duplicate() {
        let a = det(0.0, 0.0, 10.0, 30.0, 0.9);
        assert_eq!(nms(&[a], 0.7), vec![a]);
        let b = det(0.0, 0.0, 10.0, 30.0, 0.8);
        assert_eq!(nms(&[b, a], 0.7), vec![a]);
    }

    #[test]
    fn nms_greedy_trace() {
        // A = [0,10]x[0,10]; B shifted by 10/9 gives IoU (10-10/9)/(10+10/9) = 0.8
        let a = det(0.0, 0.0, 10.0, 10.0, 0.9);
        let b = det(10.0 / 9.0, 0.0, 10.0, 10.0, 0.8);
        let c = det(50.0, 50.0, 10.0, 10.0, 0.5);
        assert!((iou(&a.bbox, &b.bbox) - 0.8).abs() < 1e-12);
        assert_eq!(nms(&[b, c, a], 0.7), vec![a, c]);
    }

    #[test]
    fn nms_tie_break_is_positional() {
        let a = det(5.0, 0.0, 10.0, 10.0, 0.5);
        let b = det(4.0, 0.0, 10.0, 10.0, 0.5);
        assert_eq!(nms(&[a, b], 0.7), vec![b]);
    }

    #[test]
    fn filter_keeps_order() {
        let a = det(0.0, 0.0, 1.0, 1.0, 0.9);
        let b = det(0.0, 0.0, 1.0, 1.0, 0.4);
        assert_eq!(filter_detections(&[a, b], 0.5), vec![a]);
        assert!(filter_detections(&[], 0.5).is_empty());
        assert_eq!(filter_detections(&[b, a], 0.0), vec![b, a]);
    }
}
