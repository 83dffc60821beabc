//! Corpus layout on disk:
//!
//! ```text
//! <root>/annotations.json
//! <root>/pixels/<scene id>.pfm
//! ```
//!
//! Pixel files start with the magic `PFM1`, then channels, height and width as
//! little-endian u32, then row-major little-endian f32 values.

use std::collections::BTreeSet;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

use super::types::{BoundingBox, BoxRef, Caption, Dataset, Language, SceneImage, Vocab};

pub const ANNOTATION_FILE: &str = "annotations.json";
const PFM_MAGIC: &[u8; 4] = b"PFM1";

#[derive(Debug, Serialize, Deserialize)]
struct SceneRecord {
    id: String,
    camera_id: u32,
    pixels: String,
    /// `[x, y, w, h, identity]`, identity -1 for unlabeled.
    boxes: Vec<(f64, f64, f64, f64, i64)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CaptionRecord {
    scene_id: String,
    box_index: usize,
    language: Language,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

#[derive(Debug, Serialize)]
struct AnnotationOut<'a> {
    vocab: &'a [String],
    scenes: Vec<SceneRecord>,
    captions: Vec<CaptionRecord>,
}

pub fn write_pfm(path: &Path, img: &SceneImage) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 4 * img.pixels.len());
    buf.extend_from_slice(PFM_MAGIC);
    for d in [img.channels, img.height, img.width] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &img.pixels {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Returns `(channels, height, width, pixels)`.
pub fn read_pfm(path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let locus = path.display().to_string();
    if bytes.len() < 16 || &bytes[..4] != PFM_MAGIC {
        return Err(Error::record(locus, "not a PFM1 pixel file"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (c, h, w) = (dim(0), dim(1), dim(2));
    let n = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::record(locus.clone(), "pixel dimensions overflow"))?;
    if bytes.len() != 16 + 4 * n {
        return Err(Error::record(
            locus,
            format!("expected {} payload bytes, found {}", 4 * n, bytes.len() - 16),
        ));
    }
    let pixels = bytes[16..]
        .chunks_exact(4)
        .map(|ch| f32::from_le_bytes(ch.try_into().unwrap()))
        .collect();
    Ok((c, h, w, pixels))
}

fn pixel_file_name(scene_id: &str) -> String {
    format!("pixels/{scene_id}.pfm")
}

/// Writes `annotations.json` plus one pixel file per scene under `root`.
pub fn save_dataset(d: &Dataset, root: &Path) -> Result<()> {
    fs::create_dir_all(root.join("pixels")).map_err(|e| Error::io(root, e))?;
    let mut scenes = Vec::with_capacity(d.scenes.len());
    for (scene, boxes) in d.scenes.iter().zip(&d.boxes) {
        let rel = pixel_file_name(&scene.id);
        write_pfm(&root.join(&rel), scene)?;
        scenes.push(SceneRecord {
            id: scene.id.clone(),
            camera_id: scene.camera_id,
            pixels: rel,
            boxes: boxes
                .iter()
                .map(|b| {
                    let label = b.identity.map_or(-1, |i| d.identity_labels[i]);
                    (b.x, b.y, b.w, b.h, label)
                })
                .collect(),
        });
    }
    let captions = d
        .captions
        .iter()
        .map(|c| CaptionRecord {
            scene_id: c.box_ref.scene_id.clone(),
            box_index: c.box_ref.box_index,
            language: c.language,
            tokens: Some(c.tokens.clone()),
            text: None,
        })
        .collect();
    let out = AnnotationOut {
        vocab: d.vocab.tokens(),
        scenes,
        captions,
    };
    let path = root.join(ANNOTATION_FILE);
    let json = serde_json::to_string_pretty(&out).map_err(|e| Error::Json {
        locus: path.display().to_string(),
        message: e.to_string(),
    })?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

fn field<'a>(root: &'a Value, key: &str) -> Result<&'a Vec<Value>> {
    root.get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| Error::record(ANNOTATION_FILE, format!("missing array `{key}`")))
}

fn parse<T: serde::de::DeserializeOwned>(v: &Value, locus: &str) -> Result<T> {
    T::deserialize(v).map_err(|e| Error::record(locus, format!("malformed record: {e}")))
}

/// Loads a corpus root. Scenes are sorted by id, boxes keep annotation order
/// and identity labels are re-indexed to `0..N` in ascending label order.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let path = root.join(ANNOTATION_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let json: Value = serde_json::from_str(&text).map_err(|e| Error::Json {
        locus: path.display().to_string(),
        message: e.to_string(),
    })?;

    let vocab_tokens: Vec<String> = match json.get("vocab") {
        Some(v) => parse(v, "vocab")?,
        None => return Err(Error::record(ANNOTATION_FILE, "missing array `vocab`")),
    };
    let vocab = Vocab::from_tokens(vocab_tokens)?;

    let mut records: Vec<SceneRecord> = field(&json, "scenes")?
        .iter()
        .enumerate()
        .map(|(i, v)| parse(v, &format!("scenes[{i}]")))
        .collect::<Result<_>>()?;

    let mut seen = BTreeSet::new();
    let mut labels = BTreeSet::new();
    for (i, r) in records.iter().enumerate() {
        if !seen.insert(r.id.clone()) {
            return Err(Error::record(format!("scenes[{i}]"), format!("duplicate scene id {:?}", r.id)));
        }
        for (j, &(x, y, w, h, label)) in r.boxes.iter().enumerate() {
            let locus = format!("scenes[{i}] ({}) boxes[{j}]", r.id);
            if !(w > 0.0 && h > 0.0) || ![x, y, w, h].iter().all(|v| v.is_finite()) {
                return Err(Error::record(locus, "invalid box extent"));
            }
            if label < -1 {
                return Err(Error::record(locus, format!("invalid identity {label}")));
            }
            if label >= 0 {
                labels.insert(label);
            }
        }
    }
    let identity_labels: Vec<i64> = labels.into_iter().collect();
    let index_of = |label: i64| identity_labels.binary_search(&label).ok();

    records.sort_by(|a, b| a.id.cmp(&b.id));
    let mut scenes = Vec::with_capacity(records.len());
    let mut boxes = Vec::with_capacity(records.len());
    for r in &records {
        let (c, h, w, pixels) = read_pfm(&root.join(&r.pixels))?;
        scenes.push(SceneImage::new(r.id.clone(), r.camera_id, (c, h, w), pixels)?);
        boxes.push(
            r.boxes
                .iter()
                .map(|&(x, y, w, h, label)| BoundingBox {
                    x,
                    y,
                    w,
                    h,
                    identity: if label >= 0 { index_of(label) } else { None },
                    score: 1.0,
                })
                .collect::<Vec<_>>(),
        );
    }

    let mut d = Dataset {
        scenes,
        boxes,
        captions: Vec::new(),
        vocab,
        num_identities: identity_labels.len(),
        identity_labels,
    };

    for (i, v) in field(&json, "captions")?.iter().enumerate() {
        let locus = format!("captions[{i}]");
        let r: CaptionRecord = parse(v, &locus)?;
        let box_ref = BoxRef {
            scene_id: r.scene_id.clone(),
            box_index: r.box_index,
        };
        let Some((_, b)) = d.resolve(&box_ref) else {
            return Err(Error::record(
                locus,
                format!("dangling reference to box {} of scene {:?}", r.box_index, r.scene_id),
            ));
        };
        let Some(identity) = b.identity else {
            return Err(Error::record(locus, "caption refers to an unlabeled box"));
        };
        let tokens = match (r.tokens, r.text) {
            (Some(t), _) => t,
            (None, Some(text)) => d
                .vocab
                .encode(&text, r.language)
                .map_err(|t| Error::record(locus.clone(), format!("token {t:?} not in vocab")))?,
            (None, None) => return Err(Error::record(locus, "caption has neither tokens nor text")),
        };
        if let Some(bad) = tokens.iter().find(|&&t| t as usize >= d.vocab.len()) {
            return Err(Error::record(locus, format!("token id {bad} outside vocabulary")));
        }
        if tokens.is_empty() || tokens.len() > super::MAX_CAPTION_LEN {
            return Err(Error::record(locus, format!("caption length {} outside 1..=128", tokens.len())));
        }
        d.captions.push(Caption {
            tokens,
            language: r.language,
            identity,
            box_ref,
        });
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_corpus(dir: &Path, annotations: &str) {
        fs::create_dir_all(dir.join("pixels")).unwrap();
        let img = SceneImage::filled("s0", (3, 16, 16), 0.5);
        write_pfm(&dir.join("pixels/s0.pfm"), &img).unwrap();
        fs::write(dir.join(ANNOTATION_FILE), annotations).unwrap();
    }

    const MINIMAL: &str = r#"{
        "vocab": ["red", "shirt"],
        "scenes": [{"id": "s0", "camera_id": 1, "pixels": "pixels/s0.pfm",
                    "boxes": [[2, 1, 5, 12, 7]]}],
        "captions": [
            {"scene_id": "s0", "box_index": 0, "language": "en", "text": "red shirt"},
            {"scene_id": "s0", "box_index": 0, "language": "synthetic", "tokens": [1]}
        ]
    }"#;

    #[test]
    fn minimal_corpus_parses() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), MINIMAL);
        let d = load_dataset(dir.path()).unwrap();
        assert_eq!(
            (d.scenes.len(), d.num_boxes(), d.captions.len(), d.num_identities),
            (1, 1, 2, 1)
        );
        assert_eq!(d.identity_labels, vec![7]);
        assert_eq!(d.captions[0].tokens, vec![0, 1]);
        assert_eq!(d.captions[0].identity, 0);
    }

    #[test]
    fn negative_extent_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &MINIMAL.replace("[2, 1, 5, 12, 7]", "[2, 1, -3, 12, 7]"));
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("invalid box extent"), "{err}");
        assert!(err.contains("scenes[0]"), "{err}");
    }

    #[test]
    fn dangling_reference_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &MINIMAL.replace("\"box_index\": 0, \"language\": \"en\"", "\"box_index\": 4, \"language\": \"en\""));
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("captions[0]") && err.contains("dangling"), "{err}");
    }

    #[test]
    fn malformed_record_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Io { .. })));
        write_corpus(dir.path(), &MINIMAL.replace("\"camera_id\": 1", "\"camera_id\": \"one\""));
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("scenes[0]") && err.contains("malformed"), "{err}");
    }

    #[test]
    fn pfm_rejects_bad_magic_and_length() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pfm");
        fs::write(&p, b"PFM2\0\0\0\0\0\0\0\0\0\0\0\0").unwrap();
        assert!(read_pfm(&p).is_err());
        let img = SceneImage::filled("x", (1, 2, 2), 0.25);
        write_pfm(&p, &img).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes.pop();
        fs::write(&p, bytes).unwrap();
        assert!(read_pfm(&p).is_err());
    }
}
