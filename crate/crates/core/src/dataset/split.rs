use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

use super::types::Dataset;

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Restricts `d` to the given scenes. Boxes whose identity is not in `keep`
/// become unlabeled, captions follow their boxes, and surviving identities
/// are re-indexed in ascending order (original labels are carried along).
fn restrict(d: &Dataset, scenes: &[usize], keep: &BTreeSet<usize>) -> Dataset {
    let scene_set: BTreeSet<usize> = scenes.iter().copied().collect();
    let present: BTreeSet<usize> = scene_set
        .iter()
        .flat_map(|&si| d.boxes[si].iter().filter_map(|b| b.identity))
        .filter(|k| keep.contains(k))
        .collect();
    let remap = |k: usize| present.iter().position(|&p| p == k);

    let mut out = Dataset {
        vocab: d.vocab.clone(),
        num_identities: present.len(),
        identity_labels: present.iter().map(|&k| d.identity_labels[k]).collect(),
        ..Dataset::default()
    };
    // scene indices ascend, so ids stay sorted
    for &si in &scene_set {
        out.scenes.push(d.scenes[si].clone());
        out.boxes.push(
            d.boxes[si]
                .iter()
                .map(|b| {
                    let mut b = *b;
                    b.identity = b.identity.and_then(remap);
                    b
                })
                .collect(),
        );
    }
    for c in &d.captions {
        let Some(si) = d.scene_index(&c.box_ref.scene_id) else {
            continue;
        };
        if !scene_set.contains(&si) {
            continue;
        }
        if let Some(k) = remap(c.identity) {
            let mut c = c.clone();
            c.identity = k;
            out.captions.push(c);
        }
    }
    out
}

/// Identity-disjoint train/test split with roughly twice as many training
/// descriptions as test descriptions, plus a validation set holding a random
/// tenth of the training scenes (removed from train).
pub fn split_dataset(d: &Dataset, seed: u64) -> Result<Splits> {
    let n = d.num_identities;
    if n < 3 {
        return Err(Error::Invalid(format!("split needs at least 3 identities, found {n}")));
    }
    let mut rng = stream(seed, Stream::Split);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut per_identity = vec![0usize; n];
    for c in &d.captions {
        per_identity[c.identity] += 1;
    }
    let total: usize = per_identity.iter().sum();
    let target = total as f64 / 3.0;
    // test takes a prefix of the shuffled identities; train keeps at least two
    let mut best = (f64::INFINITY, 1);
    let mut acc = 0usize;
    for m in 1..=n - 2 {
        acc += per_identity[order[m - 1]];
        let gap = (acc as f64 - target).abs();
        if gap < best.0 {
            best = (gap, m);
        }
    }
    let test_ids: BTreeSet<usize> = order[..best.1].iter().copied().collect();
    let train_ids: BTreeSet<usize> = order[best.1..].iter().copied().collect();

    let scenes_with = |ids: &BTreeSet<usize>| -> Vec<usize> {
        (0..d.scenes.len())
            .filter(|&si| d.boxes[si].iter().any(|b| b.identity.is_some_and(|k| ids.contains(&k))))
            .collect()
    };
    let test_scenes = scenes_with(&test_ids);
    let mut train_scenes = scenes_with(&train_ids);

    let n_val = (train_scenes.len() as f64 / 10.0).round() as usize;
    let mut shuffled = train_scenes.clone();
    shuffled.shuffle(&mut rng);
    let val_scenes: BTreeSet<usize> = shuffled[..n_val].iter().copied().collect();
    train_scenes.retain(|si| !val_scenes.contains(si));
    let val_scenes: Vec<usize> = val_scenes.into_iter().collect();

    Ok(Splits {
        train: restrict(d, &train_scenes, &train_ids),
        val: restrict(d, &val_scenes, &train_ids),
        test: restrict(d, &test_scenes, &test_ids),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{BoundingBox, BoxRef, Caption, Language, SceneImage, Vocab};

    /// One scene per identity, `per_box` captions each.
    fn corpus(n: usize, per_box: usize) -> Dataset {
        let mut d = Dataset {
            vocab: Vocab::from_tokens(vec!["t".into()]).unwrap(),
            num_identities: n,
            identity_labels: (0..n as i64).collect(),
            ..Dataset::default()
        };
        for k in 0..n {
            let id = format!("s{k:04}");
            d.scenes.push(SceneImage::filled(id.clone(), (3, 16, 16), 0.5));
            d.boxes.push(vec![BoundingBox::new(0.0, 0.0, 5.0, 15.0).with_identity(k)]);
            for _ in 0..per_box {
                d.captions.push(Caption {
                    tokens: vec![0],
                    language: Language::Synthetic,
                    identity: k,
                    box_ref: BoxRef {
                        scene_id: id.clone(),
                        box_index: 0,
                    },
                });
            }
        }
        d
    }

    fn labels(d: &Dataset) -> BTreeSet<i64> {
        d.identity_labels.iter().copied().collect()
    }

    #[test]
    fn three_identities_split_two_to_one() {
        let s = split_dataset(&corpus(3, 2), 1).unwrap();
        assert_eq!(s.test.num_identities, 1);
        assert_eq!(s.train.num_identities + s.val.num_identities, 2);
    }

    #[test]
    fn too_few_identities() {
        assert!(split_dataset(&corpus(2, 2), 1).is_err());
    }

    #[test]
    fn deterministic_and_disjoint() {
        let d = corpus(40, 2);
        let a = split_dataset(&d, 9).unwrap();
        assert_eq!(a, split_dataset(&d, 9).unwrap());
        assert!(labels(&a.train).is_disjoint(&labels(&a.test)));
        assert!(labels(&a.val).is_disjoint(&labels(&a.test)));
    }

    #[test]
    fn ninety_identities_keep_the_ratio() {
        let s = split_dataset(&corpus(90, 2), 3).unwrap();
        let train = (s.train.captions.len() + s.val.captions.len()) as f64;
        let ratio = train / s.test.captions.len() as f64;
        assert!((1.9..=2.1).contains(&ratio), "{ratio}");
    }
}
