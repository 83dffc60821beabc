//! Attribute-conditioned synthetic corpus.
//!
//! Every identity is a tuple of four attributes (hair colour, torso colour,
//! legs colour, accessory colour). Persons are drawn as stacked colour bands
//! inside their boxes and described top to bottom. Two caption variants exist
//! per box: a canonical one and one using synonyms with one attribute dropped.
//! Any two identities differ in at least two attributes, so a caption with a
//! dropped attribute still names a unique identity.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Rng, Stream};

use super::types::{BoundingBox, BoxRef, Caption, Dataset, Language, SceneImage, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_identities: usize,
    pub num_scenes: usize,
    pub persons_per_scene: usize,
    /// 1 or 2.
    pub captions_per_box: usize,
    pub shuffle_phrases: bool,
    pub hair_colors: usize,
    pub torso_colors: usize,
    pub legs_colors: usize,
    pub accessory_colors: usize,
    pub scene_height: usize,
    pub scene_width: usize,
    pub num_cameras: u32,
    /// Random coloured rectangles painted into the background of each scene.
    pub clutter: usize,
    /// Fraction of each person's box, from the bottom, hidden by an obstacle.
    pub occlusion: f64,
    pub pixel_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_identities: 20,
            num_scenes: 48,
            persons_per_scene: 3,
            captions_per_box: 2,
            shuffle_phrases: false,
            hair_colors: 3,
            torso_colors: 3,
            legs_colors: 3,
            accessory_colors: 3,
            scene_height: 64,
            scene_width: 48,
            num_cameras: 6,
            clutter: 3,
            occlusion: 0.0,
            pixel_noise: 0.03,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Hair,
    Torso,
    Legs,
    Accessory,
}

impl Slot {
    pub const ALL: [Slot; 4] = [Slot::Hair, Slot::Torso, Slot::Legs, Slot::Accessory];

    fn palette(self) -> &'static [(&'static str, [f32; 3])] {
        match self {
            Slot::Hair => &HAIR,
            Slot::Torso => &TORSO,
            Slot::Legs => &LEGS,
            Slot::Accessory => &ACCESSORY,
        }
    }

    /// (canonical phrase, synonym phrase); `#` stands for the colour word.
    fn phrases(self) -> (&'static [&'static str], &'static [&'static str]) {
        match self {
            Slot::Hair => (&["with", "#", "hair"], &["with", "#", "hairstyle"]),
            Slot::Torso => (&["wearing", "a", "#", "shirt"], &["in", "a", "#", "top"]),
            Slot::Legs => (&["#", "pants"], &["#", "trousers"]),
            Slot::Accessory => (&["carrying", "a", "#", "bag"], &["holding", "a", "#", "backpack"]),
        }
    }
}

const HAIR: [(&str, [f32; 3]); 6] = [
    ("black", [0.08, 0.07, 0.06]),
    ("brown", [0.45, 0.28, 0.12]),
    ("blond", [0.92, 0.82, 0.45]),
    ("silver", [0.75, 0.75, 0.80]),
    ("auburn", [0.60, 0.20, 0.10]),
    ("platinum", [0.96, 0.95, 0.86]),
];
const TORSO: [(&str, [f32; 3]); 6] = [
    ("red", [0.86, 0.10, 0.10]),
    ("orange", [0.98, 0.55, 0.10]),
    ("yellow", [0.95, 0.90, 0.15]),
    ("purple", [0.50, 0.15, 0.70]),
    ("pink", [0.98, 0.55, 0.75]),
    ("teal", [0.00, 0.55, 0.55]),
];
const LEGS: [(&str, [f32; 3]); 6] = [
    ("blue", [0.12, 0.25, 0.85]),
    ("green", [0.10, 0.60, 0.20]),
    ("khaki", [0.76, 0.69, 0.50]),
    ("navy", [0.05, 0.07, 0.30]),
    ("olive", [0.45, 0.45, 0.10]),
    ("charcoal", [0.25, 0.25, 0.25]),
];
const ACCESSORY: [(&str, [f32; 3]); 4] = [
    ("lime", [0.60, 0.95, 0.10]),
    ("cyan", [0.10, 0.90, 0.95]),
    ("magenta", [0.90, 0.10, 0.80]),
    ("gold", [0.85, 0.65, 0.10]),
];

/// Attribute values indexed by [`Slot::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Attributes(pub [usize; 4]);

impl Attributes {
    pub fn get(&self, slot: Slot) -> usize {
        self.0[slot as usize]
    }

    pub fn hamming(&self, other: &Attributes) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }

    /// Colour word naming this attribute value.
    pub fn word(&self, slot: Slot) -> &'static str {
        slot.palette()[self.get(slot)].0
    }
}

impl SynthConfig {
    fn slot_sizes(&self) -> [usize; 4] {
        [self.hair_colors, self.torso_colors, self.legs_colors, self.accessory_colors]
    }

    fn check(&self) -> Result<()> {
        for (slot, n) in Slot::ALL.iter().zip(self.slot_sizes()) {
            if n == 0 || n > slot.palette().len() {
                return Err(Error::Config(format!(
                    "{slot:?} colours must be in 1..={}, got {n}",
                    slot.palette().len()
                )));
            }
        }
        if self.num_identities == 0 || self.num_scenes == 0 || self.persons_per_scene == 0 {
            return Err(Error::Config("identities, scenes and persons per scene must be positive".into()));
        }
        if !(1..=2).contains(&self.captions_per_box) {
            return Err(Error::Config(format!(
                "captions_per_box must be 1 or 2, got {}",
                self.captions_per_box
            )));
        }
        if self.scene_height < 16 || self.scene_width < 16 {
            return Err(Error::Config("scenes must be at least 16x16".into()));
        }
        if !(0.0..1.0).contains(&self.occlusion) || !(0.0..=0.5).contains(&self.pixel_noise) {
            return Err(Error::Config("occlusion must be in [0, 1), pixel_noise in [0, 0.5]".into()));
        }
        let space: usize = self.slot_sizes().iter().product();
        if space < self.num_identities {
            return Err(Error::Config(format!(
                "attribute space of {space} tuples is smaller than {} identities",
                self.num_identities
            )));
        }
        let persons = self.persons_per_scene.min(self.num_identities);
        if self.num_scenes * persons < self.num_identities {
            return Err(Error::Config(format!(
                "{} scenes with {persons} persons cannot hold {} identities",
                self.num_scenes, self.num_identities
            )));
        }
        if self.scene_width / persons < 4 {
            return Err(Error::Config("scene too narrow for its persons".into()));
        }
        Ok(())
    }

    /// Vocabulary in a fixed order, restricted to the configured colours.
    pub fn vocab(&self) -> Vocab {
        let mut tokens: Vec<String> = Vec::new();
        let mut add = |t: &str| {
            if !tokens.iter().any(|x| x == t) {
                tokens.push(t.to_string());
            }
        };
        for t in ["a", "person", "pedestrian"] {
            add(t);
        }
        for slot in Slot::ALL {
            let (canon, syn) = slot.phrases();
            for t in canon.iter().chain(syn).filter(|t| **t != "#") {
                add(t);
            }
        }
        for (slot, n) in Slot::ALL.iter().zip(self.slot_sizes()) {
            for (word, _) in &slot.palette()[..n] {
                add(word);
            }
        }
        Vocab::from_tokens(tokens).expect("vocabulary words are unique")
    }
}

fn draw_attributes(cfg: &SynthConfig, rng: &mut Rng) -> Result<Vec<Attributes>> {
    let sizes = cfg.slot_sizes();
    let mut out: Vec<Attributes> = Vec::with_capacity(cfg.num_identities);
    let mut attempts = 0;
    let mut misses = 0;
    while out.len() < cfg.num_identities {
        attempts += 1;
        if attempts > 200_000 {
            return Err(Error::Config(format!(
                "could not find {} attribute tuples pairwise differing in two attributes",
                cfg.num_identities
            )));
        }
        let cand = Attributes(std::array::from_fn(|i| rng.random_range(0..sizes[i])));
        if out.iter().all(|a| a.hamming(&cand) >= 2) {
            out.push(cand);
            misses = 0;
        } else {
            misses += 1;
            // a greedy pick can leave no room in a small attribute space
            if misses == 2_000 {
                out.clear();
                misses = 0;
            }
        }
    }
    Ok(out)
}

fn caption_tokens(
    attrs: &Attributes,
    synonyms: bool,
    drop: Option<Slot>,
    order: &[usize; 4],
    vocab: &Vocab,
) -> Vec<u32> {
    let mut words: Vec<&str> = vec!["a", if synonyms { "pedestrian" } else { "person" }];
    for &i in order {
        let slot = Slot::ALL[i];
        if drop == Some(slot) {
            continue;
        }
        let (canon, syn) = slot.phrases();
        for &w in if synonyms { syn } else { canon } {
            words.push(if w == "#" { attrs.word(slot) } else { w });
        }
    }
    words
        .iter()
        .map(|w| vocab.id(w).expect("caption words come from the vocabulary"))
        .collect()
}

fn fill_rect(img: &mut SceneImage, (x0, y0, x1, y1): (usize, usize, usize, usize), rgb: [f32; 3]) {
    for y in y0..y1.min(img.height) {
        for x in x0..x1.min(img.width) {
            for (c, v) in rgb.iter().enumerate() {
                img.set(c, y, x, *v);
            }
        }
    }
}

fn draw_person(img: &mut SceneImage, b: &BoundingBox, a: &Attributes) {
    let (x, y, w, h) = (b.x as usize, b.y as usize, b.w as usize, b.h as usize);
    let row = |f: f64| y + (f * h as f64).round() as usize;
    let col = |f: f64| x + (f * w as f64).round() as usize;
    let colour = |slot: Slot| slot.palette()[a.get(slot)].1;

    fill_rect(img, (col(0.2), y, col(0.8).max(col(0.2) + 1), row(0.2)), colour(Slot::Hair));
    fill_rect(img, (x, row(0.2), x + w, row(0.55)), colour(Slot::Torso));
    // two legs with a gap between them
    let gap = (w / 5).max(1);
    let mid = x + w / 2;
    fill_rect(img, (x, row(0.55), mid.saturating_sub(gap / 2).max(x + 1), y + h), colour(Slot::Legs));
    fill_rect(img, ((mid + gap.div_ceil(2)).min(x + w - 1), row(0.55), x + w, y + h), colour(Slot::Legs));
    let side = (w / 3).max(2);
    let top = row(0.38);
    fill_rect(img, (x + w - side, top, x + w, top + side), colour(Slot::Accessory));
}

/// Generates a corpus; identical `(cfg, seed)` gives an identical corpus.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<Dataset> {
    generate_synthetic_with_attributes(cfg, seed).map(|(d, _)| d)
}

/// As [`generate_synthetic`], also returning each identity's attribute tuple.
///
/// Scene layout, pixels and caption wording draw from separate streams, so
/// changing `captions_per_box` keeps scenes and boxes unchanged.
pub fn generate_synthetic_with_attributes(
    cfg: &SynthConfig,
    seed: u64,
) -> Result<(Dataset, Vec<Attributes>)> {
    cfg.check()?;
    let mut layout = stream(seed, Stream::SynthLayout);
    let mut pixels = stream(seed, Stream::SynthPixels);
    let mut wording = stream(seed, Stream::SynthCaptions);

    let attrs = draw_attributes(cfg, &mut layout)?;
    let vocab = cfg.vocab();
    let n = cfg.num_identities;
    let persons = cfg.persons_per_scene.min(n);
    let (sh, sw) = (cfg.scene_height, cfg.scene_width);
    let slot_w = sw / persons;

    let mut d = Dataset {
        vocab,
        num_identities: n,
        identity_labels: (0..n as i64).collect(),
        ..Dataset::default()
    };
    let mut usage = vec![0usize; n];
    let width = cfg.num_scenes.to_string().len().max(4);

    for s in 0..cfg.num_scenes {
        // least-used identities first, random among ties
        let mut cand: Vec<(usize, u64, usize)> =
            (0..n).map(|k| (usage[k], layout.random::<u64>(), k)).collect();
        cand.sort_unstable();
        let mut chosen: Vec<usize> = cand[..persons].iter().map(|c| c.2).collect();
        chosen.shuffle(&mut layout);

        let mut boxes = Vec::with_capacity(persons);
        for (p, &k) in chosen.iter().enumerate() {
            usage[k] += 1;
            let h = ((layout.random_range(0.55..0.8) * sh as f64).round() as usize).clamp(3, sh);
            let w = ((h as f64 / 3.0).round() as usize).clamp(1, slot_w);
            let x = p * slot_w + layout.random_range(0..=slot_w - w);
            let y = layout.random_range(0..=sh - h);
            boxes.push(BoundingBox::new(x as f64, y as f64, w as f64, h as f64).with_identity(k));
        }

        let id = format!("scene_{s:0width$}");
        let mut img = SceneImage::filled(id.clone(), (3, sh, sw), 0.0);
        let g: f32 = pixels.random_range(0.35..0.65);
        let base: [f32; 3] = std::array::from_fn(|_| g + pixels.random_range(-0.05..0.05));
        fill_rect(&mut img, (0, 0, sw, sh), base);
        for _ in 0..cfg.clutter {
            let cw = pixels.random_range(3..=12usize).min(sw);
            let ch = pixels.random_range(3..=20usize).min(sh);
            let cx = pixels.random_range(0..=sw - cw);
            let cy = pixels.random_range(0..=sh - ch);
            let rgb: [f32; 3] = std::array::from_fn(|_| pixels.random_range(0.0..1.0));
            fill_rect(&mut img, (cx, cy, cx + cw, cy + ch), rgb);
        }
        for b in &boxes {
            draw_person(&mut img, b, &attrs[b.identity.unwrap()]);
            if cfg.occlusion > 0.0 {
                let hidden = (cfg.occlusion * b.h).round() as usize;
                let (x, y1) = (b.x as usize, (b.y + b.h) as usize);
                let v: f32 = pixels.random_range(0.2..0.8);
                fill_rect(&mut img, (x, y1 - hidden, x + b.w as usize, y1), [v; 3]);
            }
        }
        if cfg.pixel_noise > 0.0 {
            let amp = cfg.pixel_noise as f32;
            for v in &mut img.pixels {
                *v = (*v + pixels.random_range(-amp..=amp)).clamp(0.0, 1.0);
            }
        }
        img.camera_id = s as u32 % cfg.num_cameras.max(1);

        for (bi, b) in boxes.iter().enumerate() {
            let k = b.identity.unwrap();
            let drop = Slot::ALL[wording.random_range(0..4)];
            let mut orders = [[0usize, 1, 2, 3]; 2];
            if cfg.shuffle_phrases {
                for o in &mut orders {
                    o.shuffle(&mut wording);
                }
            }
            let pick_synonym: bool = wording.random_bool(0.5);
            let variants = [
                caption_tokens(&attrs[k], false, None, &orders[0], &d.vocab),
                caption_tokens(&attrs[k], true, Some(drop), &orders[1], &d.vocab),
            ];
            let selected: Vec<&Vec<u32>> = if cfg.captions_per_box == 2 {
                variants.iter().collect()
            } else {
                vec![&variants[pick_synonym as usize]]
            };
            for tokens in selected {
                d.captions.push(Caption {
                    tokens: tokens.clone(),
                    language: Language::Synthetic,
                    identity: k,
                    box_ref: BoxRef {
                        scene_id: id.clone(),
                        box_index: bi,
                    },
                });
            }
        }
        d.scenes.push(img);
        d.boxes.push(boxes);
    }
    Ok((d, attrs))
}
