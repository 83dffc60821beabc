use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_CAPTION_LEN: usize = 128;
pub const MIN_IMAGE_SIDE: usize = 16;

/// A scene frame, `channels × height × width` row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage {
    pub id: String,
    pub camera_id: u32,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl SceneImage {
    pub fn new(
        id: impl Into<String>,
        camera_id: u32,
        (channels, height, width): (usize, usize, usize),
        pixels: Vec<f32>,
    ) -> Result<Self> {
        let id = id.into();
        if pixels.len() != channels * height * width {
            return Err(Error::record(
                format!("scene {id}"),
                format!(
                    "pixel buffer has {} values, expected {channels}x{height}x{width}",
                    pixels.len()
                ),
            ));
        }
        Ok(Self {
            id,
            camera_id,
            channels,
            height,
            width,
            pixels,
        })
    }

    pub fn filled(id: impl Into<String>, (c, h, w): (usize, usize, usize), value: f32) -> Self {
        Self {
            id: id.into(),
            camera_id: 0,
            channels: c,
            height: h,
            width: w,
            pixels: vec![value; c * h * w],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.pixels[(c * self.height + y) * self.width + x] = v;
    }
}

/// Axis-aligned box `(x, y, w, h)` in pixels, top-left origin, covering
/// `[x, x + w) × [y, y + h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    /// `None` marks an unlabeled person (or a spurious detection).
    pub identity: Option<usize>,
    /// 1.0 for ground truth.
    pub score: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self {
            x,
            y,
            w,
            h,
            identity: None,
            score: 1.0,
        }
    }

    pub fn with_identity(mut self, identity: usize) -> Self {
        self.identity = Some(identity);
        self
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0
            && self.h > 0.0
            && [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite())
    }

    /// Intersection with the image rectangle, `None` when nothing remains.
    pub fn clamped(&self, width: usize, height: usize) -> Option<BoundingBox> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = (self.x + self.w).min(width as f64);
        let y1 = (self.y + self.h).min(height as f64);
        if x1 - x0 <= 0.0 || y1 - y0 <= 0.0 || !self.is_valid() {
            return None;
        }
        Some(BoundingBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
            ..*self
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Zh,
    En,
    Synthetic,
}

/// Scene id plus index into that scene's box list.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BoxRef {
    pub scene_id: String,
    pub box_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Caption {
    pub tokens: Vec<u32>,
    pub language: Language,
    pub identity: usize,
    pub box_ref: BoxRef,
}

impl Caption {
    /// Length as reported in statistics. Chinese captions are tokenised per
    /// character, so token count equals character count for every language.
    pub fn length(&self) -> usize {
        self.tokens.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::record(format!("vocab[{i}]"), format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Splits text the way captions of `language` are tokenised: characters
    /// for Chinese, whitespace-separated words otherwise.
    pub fn split_text(text: &str, language: Language) -> Vec<String> {
        match language {
            Language::Zh => text
                .chars()
                .filter(|c| !c.is_whitespace())
                .map(String::from)
                .collect(),
            Language::En | Language::Synthetic => {
                text.split_whitespace().map(str::to_lowercase).collect()
            }
        }
    }

    pub fn encode(&self, text: &str, language: Language) -> std::result::Result<Vec<u32>, String> {
        Self::split_text(text, language)
            .into_iter()
            .map(|t| self.id(&t).ok_or(t))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// A fully resolved corpus. Identity indices are contiguous `0..num_identities`;
/// `identity_labels[i]` keeps the label identity `i` had in its source file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub scenes: Vec<SceneImage>,
    /// Parallel to `scenes`.
    pub boxes: Vec<Vec<BoundingBox>>,
    pub captions: Vec<Caption>,
    pub vocab: Vocab,
    pub num_identities: usize,
    pub identity_labels: Vec<i64>,
}

impl Dataset {
    pub fn scene_index(&self, id: &str) -> Option<usize> {
        self.scenes.binary_search_by(|s| s.id.as_str().cmp(id)).ok()
    }

    pub fn resolve(&self, r: &BoxRef) -> Option<(usize, &BoundingBox)> {
        let si = self.scene_index(&r.scene_id)?;
        self.boxes[si].get(r.box_index).map(|b| (si, b))
    }

    pub fn num_boxes(&self) -> usize {
        self.boxes.iter().map(Vec::len).sum()
    }

    pub fn num_labeled_boxes(&self) -> usize {
        self.boxes.iter().flatten().filter(|b| b.identity.is_some()).count()
    }

    /// Labeled ground-truth boxes of `identity` as `(scene index, box index)`.
    pub fn boxes_of(&self, identity: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (si, bs) in self.boxes.iter().enumerate() {
            for (bi, b) in bs.iter().enumerate() {
                if b.identity == Some(identity) {
                    out.push((si, bi));
                }
            }
        }
        out
    }
}
