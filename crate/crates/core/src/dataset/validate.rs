use std::collections::HashMap;
use std::fmt;

use super::types::{Dataset, MAX_CAPTION_LEN, MIN_IMAGE_SIDE};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationConfig {
    /// Required caption count per labeled box; `None` disables the rule.
    pub captions_per_box: Option<usize>,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            captions_per_box: Some(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub locus: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.locus, self.message)
    }
}

/// Lists every broken invariant. An empty list means the corpus is valid.
pub fn validate_dataset(d: &Dataset, rules: &ValidationConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |locus: String, message: String| out.push(Violation { locus, message });

    if d.boxes.len() != d.scenes.len() {
        push(
            "dataset".into(),
            format!("{} box lists for {} scenes", d.boxes.len(), d.scenes.len()),
        );
    }
    if d.identity_labels.len() != d.num_identities {
        push(
            "dataset".into(),
            format!(
                "{} identity labels for {} identities",
                d.identity_labels.len(),
                d.num_identities
            ),
        );
    }
    for w in d.scenes.windows(2) {
        if w[0].id >= w[1].id {
            push(format!("scene {}", w[1].id), "scenes not sorted by unique id".into());
        }
    }

    let mut boxes_per_identity = vec![0usize; d.num_identities];
    for (si, scene) in d.scenes.iter().enumerate() {
        let locus = format!("scene {}", scene.id);
        if scene.height < MIN_IMAGE_SIDE || scene.width < MIN_IMAGE_SIDE {
            push(locus.clone(), format!("image {}x{} below 16x16", scene.height, scene.width));
        }
        if scene.pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            push(locus.clone(), "pixel values outside [0, 1]".into());
        }
        for (bi, b) in d.boxes.get(si).into_iter().flatten().enumerate() {
            let bl = format!("{locus} box {bi}");
            if !b.is_valid() {
                push(bl.clone(), "invalid box extent".into());
            } else if b.clamped(scene.width, scene.height).is_none() {
                push(bl.clone(), "box lies outside its image".into());
            }
            match b.identity {
                Some(k) if k >= d.num_identities => {
                    push(bl, format!("identity {k} outside 0..{}", d.num_identities))
                }
                Some(k) => boxes_per_identity[k] += 1,
                None => {}
            }
        }
    }
    for (k, &n) in boxes_per_identity.iter().enumerate() {
        if n == 0 {
            push(format!("identity {k}"), "labeled identity has no box".into());
        }
    }

    let mut per_box: HashMap<(usize, usize), usize> = HashMap::new();
    for (ci, c) in d.captions.iter().enumerate() {
        let locus = format!("caption {ci}");
        if c.tokens.is_empty() || c.tokens.len() > MAX_CAPTION_LEN {
            push(locus.clone(), format!("length {} outside 1..=128", c.tokens.len()));
        }
        if c.tokens.iter().any(|&t| t as usize >= d.vocab.len()) {
            push(locus.clone(), "token id outside vocabulary".into());
        }
        let Some(si) = d.scene_index(&c.box_ref.scene_id) else {
            push(locus, "dangling reference".into());
            continue;
        };
        let Some(b) = d.boxes[si].get(c.box_ref.box_index) else {
            push(locus, "dangling reference".into());
            continue;
        };
        if b.identity != Some(c.identity) {
            push(locus, "caption identity differs from its box".into());
        }
        *per_box.entry((si, c.box_ref.box_index)).or_default() += 1;
    }

    if let Some(required) = rules.captions_per_box {
        for (si, boxes) in d.boxes.iter().enumerate() {
            for (bi, b) in boxes.iter().enumerate() {
                if b.identity.is_none() {
                    continue;
                }
                let n = per_box.get(&(si, bi)).copied().unwrap_or(0);
                if n != required {
                    push(
                        format!("scene {} box {bi}", d.scenes[si].id),
                        format!("{n} captions, expected {required}"),
                    );
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{BoundingBox, BoxRef, Caption, Language, SceneImage, Vocab};

    fn one_box(captions: usize) -> Dataset {
        let caption = Caption {
            tokens: vec![0],
            language: Language::Synthetic,
            identity: 0,
            box_ref: BoxRef {
                scene_id: "s0".into(),
                box_index: 0,
            },
        };
        Dataset {
            scenes: vec![SceneImage::filled("s0", (3, 16, 16), 0.5)],
            boxes: vec![vec![BoundingBox::new(1.0, 1.0, 4.0, 12.0).with_identity(0)]],
            captions: vec![caption; captions],
            vocab: Vocab::from_tokens(vec!["tok".into()]).unwrap(),
            num_identities: 1,
            identity_labels: vec![0],
        }
    }

    #[test]
    fn two_captions_satisfy_default_rule() {
        assert!(validate_dataset(&one_box(2), &ValidationConfig::default()).is_empty());
    }

    #[test]
    fn single_caption_violates_default_rule() {
        let v = validate_dataset(&one_box(1), &ValidationConfig::default());
        assert_eq!(v.len(), 1);
        assert!(v[0].locus.contains("box 0"), "{}", v[0]);
    }

    #[test]
    fn dangling_reference_is_reported() {
        let mut d = one_box(2);
        d.captions[1].box_ref.scene_id = "nope".into();
        let v = validate_dataset(&d, &ValidationConfig { captions_per_box: None });
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].message, "dangling reference");
    }
}
