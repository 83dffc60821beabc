use serde::{Deserialize, Serialize};

use crate::boxes::{crop_resize, filter_detections, nms, Detection, Detector};
use crate::dataset::{BoundingBox, SceneImage};
use crate::error::Result;
use crate::exec::Exec;
use crate::tpan::TpsModel;

use super::EvalConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryEntry {
    pub scene_id: String,
    /// Position of the scene in the evaluated split.
    pub scene: usize,
    pub detection: Detection,
    /// Unit-norm image embedding.
    pub embedding: Vec<f64>,
}

/// Box counts along the detection pipeline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorStats {
    pub raw: usize,
    pub after_nms: usize,
    pub kept: usize,
    pub gt_boxes: usize,
}

impl std::ops::Add for DetectorStats {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            raw: self.raw + o.raw,
            after_nms: self.after_nms + o.after_nms,
            kept: self.kept + o.kept,
            gt_boxes: self.gt_boxes + o.gt_boxes,
        }
    }
}

/// Detect, suppress, filter by score, in that order.
pub fn scene_detections(
    scene: &SceneImage,
    gts: &[BoundingBox],
    detector: &dyn Detector,
    cfg: &EvalConfig,
) -> Result<(Vec<Detection>, DetectorStats)> {
    let raw = detector.detect(scene, gts)?;
    let suppressed = nms(&raw, cfg.nms_thresh);
    let kept = filter_detections(&suppressed, cfg.score_thresh);
    let stats = DetectorStats {
        raw: raw.len(),
        after_nms: suppressed.len(),
        kept: kept.len(),
        gt_boxes: gts.iter().filter(|b| b.identity.is_some()).count(),
    };
    Ok((kept, stats))
}

/// Runs the detection pipeline on every scene and embeds each kept box.
///
/// `boxes[i]` are the annotations of `scenes[i]`. Entries come out scene by
/// scene, in detection rank order within a scene.
pub fn build_gallery(
    model: &TpsModel,
    scenes: &[SceneImage],
    boxes: &[Vec<BoundingBox>],
    detector: &dyn Detector,
    cfg: &EvalConfig,
    exec: Exec,
) -> Result<(Vec<GalleryEntry>, DetectorStats)> {
    let indexed: Vec<usize> = (0..scenes.len()).collect();
    let per_scene = exec.try_map(&indexed, |&i| {
        let scene = &scenes[i];
        let gts = boxes.get(i).map(Vec::as_slice).unwrap_or(&[]);
        let inner = || -> Result<(Vec<GalleryEntry>, DetectorStats)> {
            let (dets, stats) = scene_detections(scene, gts, detector, cfg)?;
            let mut out = Vec::with_capacity(dets.len());
            for d in dets {
                let patch = crop_resize(
                    scene,
                    &d.bbox,
                    model.config.crop_height,
                    model.config.crop_width,
                )?;
                out.push(GalleryEntry {
                    scene_id: scene.id.clone(),
                    scene: i,
                    detection: d,
                    embedding: model.embed_image(&patch)?.into_data(),
                });
            }
            Ok((out, stats))
        };
        inner().map_err(|e| e.in_scene(&scene.id))
    })?;
    let mut gallery = Vec::new();
    let mut stats = DetectorStats::default();
    for (entries, s) in per_scene {
        gallery.extend(entries);
        stats = stats + s;
    }
    Ok((gallery, stats))
}
