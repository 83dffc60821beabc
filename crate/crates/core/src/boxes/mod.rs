//! Box geometry, crop-and-resize and simulated detection.

mod crop;
mod detect;
mod geometry;

pub use crop::crop_resize;
pub use detect::{
    jitter_detect, read_detections, write_detections, DetectionSource, Detector,
    ExternalDetector, GroundTruthDetector, JitterDetector, JitterParams,
};
pub use geometry::{filter_detections, iou, nms, Detection};
