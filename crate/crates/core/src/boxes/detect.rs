use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::dataset::{BoundingBox, SceneImage};
use crate::error::{Error, Result};
use crate::rng::{indexed_stream, key_of, Stream};

use super::{iou, Detection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionSource {
    GroundTruth,
    Simulated,
    External,
}

/// Noise model of the simulated detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterParams {
    /// Centre shift std, as a fraction of box width/height.
    pub translation_sigma: f64,
    /// Std of the log scale factor applied to width and height.
    pub scale_sigma: f64,
    pub drop_prob: f64,
    /// Expected number of false boxes per scene.
    pub spurious_rate: f64,
    pub score_noise: f64,
}

impl Default for JitterParams {
    fn default() -> Self {
        Self {
            translation_sigma: 0.15,
            scale_sigma: 0.1,
            drop_prob: 0.05,
            spurious_rate: 1.0,
            score_noise: 0.05,
        }
    }
}

impl JitterParams {
    pub fn zero() -> Self {
        Self {
            translation_sigma: 0.0,
            scale_sigma: 0.0,
            drop_prob: 0.0,
            spurious_rate: 0.0,
            score_noise: 0.0,
        }
    }

    pub fn check(&self) -> Result<()> {
        let all = [
            self.translation_sigma,
            self.scale_sigma,
            self.drop_prob,
            self.spurious_rate,
            self.score_noise,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) || self.drop_prob >= 1.0 {
            return Err(Error::Config(format!(
                "jitter parameters must be non-negative with drop_prob < 1: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Simulated detector: drops, shifts and rescales ground-truth boxes and adds
/// spurious unlabeled boxes. Each scene draws from its own stream keyed by
/// the scene id, so the result does not depend on processing order.
///
/// A surviving box scores `1 - (1 - IoU with its source) - noise`; a spurious
/// box scores `U(0, 1) - noise`; both clamped to `[0, 1]`.
pub fn jitter_detect(
    scene: &SceneImage,
    gts: &[BoundingBox],
    p: &JitterParams,
    seed: u64,
) -> Result<Vec<Detection>> {
    p.check()?;
    let mut rng = indexed_stream(seed, Stream::Detector, key_of(&scene.id));
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::with_capacity(gts.len() + 2);
    for gt in gts {
        // draw everything up front so the stream advances identically per box
        let drop: f64 = rng.random();
        let dx = std_normal.sample(&mut rng) * p.translation_sigma;
        let dy = std_normal.sample(&mut rng) * p.translation_sigma;
        let sw = (std_normal.sample(&mut rng) * p.scale_sigma).exp();
        let sh = (std_normal.sample(&mut rng) * p.scale_sigma).exp();
        let noise = std_normal.sample(&mut rng) * p.score_noise;
        if drop < p.drop_prob {
            continue;
        }
        let (cx, cy) = gt.center();
        let (w, h) = (gt.w * sw, gt.h * sh);
        let moved = BoundingBox {
            x: cx + dx * gt.w - 0.5 * w,
            y: cy + dy * gt.h - 0.5 * h,
            w,
            h,
            ..*gt
        };
        let Some(b) = moved.clamped(scene.width, scene.height) else {
            continue;
        };
        let misalignment = 1.0 - iou(gt, &b);
        out.push(Detection::new(b, 1.0 - misalignment - noise, DetectionSource::Simulated));
    }
    if p.spurious_rate > 0.0 {
        let count = Poisson::new(p.spurious_rate)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(&mut rng) as usize;
        for _ in 0..count {
            let h = rng.random_range(0.4..0.8) * scene.height as f64;
            let w = (h / 3.0).min(scene.width as f64);
            let x = rng.random_range(0.0..=scene.width as f64 - w);
            let y = rng.random_range(0.0..=scene.height as f64 - h);
            let s: f64 = rng.random();
            let noise = std_normal.sample(&mut rng) * p.score_noise;
            out.push(Detection::new(
                BoundingBox::new(x, y, w, h),
                s - noise,
                DetectionSource::Simulated,
            ));
        }
    }
    Ok(out)
}

/// Anything that proposes person boxes for a scene.
pub trait Detector: Send + Sync {
    /// `gts` are the annotated boxes of the scene; real detectors ignore them.
    fn detect(&self, scene: &SceneImage, gts: &[BoundingBox]) -> Result<Vec<Detection>>;
}

/// Returns the annotation boxes themselves with score 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroundTruthDetector;

impl Detector for GroundTruthDetector {
    fn detect(&self, scene: &SceneImage, gts: &[BoundingBox]) -> Result<Vec<Detection>> {
        Ok(gts
            .iter()
            .filter_map(|b| b.clamped(scene.width, scene.height))
            .map(|b| Detection::new(b, 1.0, DetectionSource::GroundTruth))
            .collect())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct JitterDetector {
    pub params: JitterParams,
    pub seed: u64,
}

impl Detector for JitterDetector {
    fn detect(&self, scene: &SceneImage, gts: &[BoundingBox]) -> Result<Vec<Detection>> {
        jitter_detect(scene, gts, &self.params, self.seed)
    }
}

/// Detections loaded from `detections.json`.
#[derive(Debug, Clone, Default)]
pub struct ExternalDetector {
    pub by_scene: BTreeMap<String, Vec<Detection>>,
}

impl Detector for ExternalDetector {
    fn detect(&self, scene: &SceneImage, _gts: &[BoundingBox]) -> Result<Vec<Detection>> {
        Ok(self
            .by_scene
            .get(&scene.id)
            .map(|ds| {
                ds.iter()
                    .filter_map(|d| {
                        d.bbox
                            .clamped(scene.width, scene.height)
                            .map(|b| Detection::new(b, d.score, d.source))
                    })
                    .collect()
            })
            .unwrap_or_default())
    }
}

/// `detections.json`: `{"<scene id>": [[x, y, w, h, score], ...], ...}`.
pub fn write_detections(path: &Path, dets: &BTreeMap<String, Vec<Detection>>) -> Result<()> {
    let rows: BTreeMap<&str, Vec<[f64; 5]>> = dets
        .iter()
        .map(|(k, v)| {
            (
                k.as_str(),
                v.iter()
                    .map(|d| [d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h, d.score])
                    .collect(),
            )
        })
        .collect();
    let json = serde_json::to_string_pretty(&rows).map_err(|e| Error::Json {
        locus: path.display().to_string(),
        message: e.to_string(),
    })?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_detections(path: &Path) -> Result<ExternalDetector> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows: BTreeMap<String, Vec<[f64; 5]>> =
        serde_json::from_str(&text).map_err(|e| Error::Json {
            locus: path.display().to_string(),
            message: e.to_string(),
        })?;
    let mut by_scene = BTreeMap::new();
    for (scene, list) in rows {
        let mut dets = Vec::with_capacity(list.len());
        for (i, [x, y, w, h, s]) in list.into_iter().enumerate() {
            let b = BoundingBox::new(x, y, w, h);
            if !b.is_valid() || !(0.0..=1.0).contains(&s) {
                return Err(Error::record(
                    format!("{}: {scene}[{i}]", path.display()),
                    "invalid detection (extent must be positive, score in [0, 1])",
                ));
            }
            dets.push(Detection::new(b, s, DetectionSource::External));
        }
        by_scene.insert(scene, dets);
    }
    Ok(ExternalDetector { by_scene })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> SceneImage {
        SceneImage::filled("scene_0001", (3, 64, 96), 0.5)
    }

    fn gts() -> Vec<BoundingBox> {
        vec![
            BoundingBox::new(5.0, 10.0, 12.0, 36.0).with_identity(0),
            BoundingBox::new(40.0, 20.0, 14.0, 40.0).with_identity(1),
        ]
    }

    #[test]
    fn zero_noise_is_identity() {
        let d = jitter_detect(&scene(), &gts(), &JitterParams::zero(), 3).unwrap();
        assert_eq!(d.len(), 2);
        for (d, g) in d.iter().zip(gts()) {
            assert_eq!(d.score, 1.0);
            assert_eq!((d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h), (g.x, g.y, g.w, g.h));
            assert_eq!(d.bbox.identity, g.identity);
        }
    }

    #[test]
    fn same_seed_same_output() {
        let p = JitterParams::default();
        let a = jitter_detect(&scene(), &gts(), &p, 11).unwrap();
        assert_eq!(a, jitter_detect(&scene(), &gts(), &p, 11).unwrap());
        assert_ne!(a, jitter_detect(&scene(), &gts(), &p, 12).unwrap());
    }

    #[test]
    fn invalid_params_rejected() {
        let p = JitterParams {
            drop_prob: 1.0,
            ..JitterParams::zero()
        };
        assert!(jitter_detect(&scene(), &gts(), &p, 1).is_err());
    }

    #[test]
    fn detections_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("detections.json");
        let dets = jitter_detect(&scene(), &gts(), &JitterParams::default(), 5).unwrap();
        let mut map = BTreeMap::new();
        map.insert(scene().id, dets.clone());
        write_detections(&path, &map).unwrap();
        let ext = read_detections(&path).unwrap();
        let back = ext.detect(&scene(), &[]).unwrap();
        assert_eq!(back.len(), dets.len());
        for (a, b) in back.iter().zip(&dets) {
            assert_eq!(a.score, b.score);
            assert_eq!((a.bbox.x, a.bbox.w), (b.bbox.x, b.bbox.w));
            assert_eq!(a.source, DetectionSource::External);
        }
    }
}
