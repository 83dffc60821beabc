use serde::{Deserialize, Serialize};

use crate::boxes::iou;
use crate::dataset::BoundingBox;
use crate::error::{Error, Result};

/// A gallery box reduced to what matching needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedBox {
    pub scene: usize,
    pub bbox: BoundingBox,
}

/// An annotated box of some identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub scene: usize,
    pub bbox: BoundingBox,
    pub identity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query: usize,
    pub identity: usize,
    /// Gallery indices, most similar first.
    pub ranking: Vec<usize>,
    /// Similarity of each ranked entry, in ranking order.
    pub similarities: Vec<f64>,
    pub correct: Vec<bool>,
    pub num_relevant: usize,
}

impl QueryResult {
    pub fn is_valid(&self) -> bool {
        self.num_relevant > 0
    }

    pub fn first_hit(&self) -> Option<usize> {
        self.correct.iter().position(|&c| c).map(|r| r + 1)
    }

    pub fn average_precision(&self) -> Option<f64> {
        self.is_valid()
            .then(|| average_precision(&self.correct, self.num_relevant))
    }
}

/// Indices sorted by descending similarity; equal similarities keep index order.
pub fn rank_by_similarity(sims: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..sims.len()).collect();
    // `+ 0.0` folds -0 into +0 so that the two compare as a tie
    idx.sort_by(|&a, &b| (sims[b] + 0.0).total_cmp(&(sims[a] + 0.0)).then(a.cmp(&b)));
    idx
}

/// Greedy claim down the ranking: a box is correct when it overlaps an
/// unclaimed ground-truth box of `identity` in its scene by at least
/// `iou_thresh`. Among several candidates the best-overlapping one is claimed.
///
/// Returns the flags and the number of ground-truth boxes of `identity`.
pub fn match_ranked_boxes(
    ranked: &[PlacedBox],
    gts: &[GroundTruth],
    identity: usize,
    iou_thresh: f64,
) -> (Vec<bool>, usize) {
    let own: Vec<&GroundTruth> = gts.iter().filter(|g| g.identity == identity).collect();
    let mut claimed = vec![false; own.len()];
    let flags = ranked
        .iter()
        .map(|b| {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in own.iter().enumerate() {
                if claimed[j] || g.scene != b.scene {
                    continue;
                }
                let o = iou(&b.bbox, &g.bbox);
                if o >= iou_thresh && best.is_none_or(|(_, bo)| o > bo) {
                    best = Some((j, o));
                }
            }
            match best {
                Some((j, _)) => {
                    claimed[j] = true;
                    true
                }
                None => false,
            }
        })
        .collect();
    (flags, own.len())
}

/// Mean of the precision at each correct rank, over `num_relevant`.
pub fn average_precision(correct: &[bool], num_relevant: usize) -> f64 {
    if num_relevant == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, &c) in correct.iter().enumerate() {
        if c {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    sum / num_relevant as f64
}

fn valid(results: &[QueryResult]) -> Result<Vec<&QueryResult>> {
    let v: Vec<&QueryResult> = results.iter().filter(|r| r.is_valid()).collect();
    if v.is_empty() {
        return Err(Error::Invalid("no query has a relevant gallery box".into()));
    }
    Ok(v)
}

/// Fraction of valid queries with a correct box in the top `k`, per `k`.
pub fn cmc(results: &[QueryResult], ranks: &[usize]) -> Result<Vec<f64>> {
    let v = valid(results)?;
    Ok(ranks
        .iter()
        .map(|&k| {
            let hits = v
                .iter()
                .filter(|r| r.correct.iter().take(k).any(|&c| c))
                .count();
            hits as f64 / v.len() as f64
        })
        .collect())
}

pub fn mean_ap(results: &[QueryResult]) -> Result<f64> {
    let v = valid(results)?;
    Ok(v.iter()
        .map(|r| average_precision(&r.correct, r.num_relevant))
        .sum::<f64>()
        / v.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(correct: &[bool], num_relevant: usize) -> QueryResult {
        QueryResult {
            query: 0,
            identity: 0,
            ranking: (0..correct.len()).collect(),
            similarities: vec![0.0; correct.len()],
            correct: correct.to_vec(),
            num_relevant,
        }
    }

    #[test]
    fn worked_ap_examples() {
        assert_eq!(average_precision(&[true, false, true], 2), (1.0 + 2.0 / 3.0) / 2.0);
        assert_eq!(average_precision(&[false, true, false], 2), 0.25);
        assert_eq!(average_precision(&[true, true, false, false], 2), 1.0);
    }

    #[test]
    fn cmc_definition() {
        let all = vec![result(&[true, false], 1); 3];
        assert_eq!(cmc(&all, &[1]).unwrap(), vec![1.0]);
        let third = [result(&[false, false, true, false, false, false], 1)];
        assert_eq!(cmc(&third, &[1, 5, 10]).unwrap(), vec![0.0, 1.0, 1.0]);
        assert!(cmc(&[result(&[false], 0)], &[1]).is_err());
        assert!(mean_ap(&[]).is_err());
    }

    #[test]
    fn greedy_claims_once() {
        let gt = BoundingBox::new(0.0, 0.0, 10.0, 20.0);
        let gts = [GroundTruth { scene: 0, bbox: gt, identity: 4 }];
        // two boxes each overlapping the single ground truth at IoU 0.8
        let a = BoundingBox::new(0.0, 0.0, 10.0, 16.0);
        let b = BoundingBox::new(0.0, 4.0, 10.0, 16.0);
        assert!((iou(&a, &gt) - 0.8).abs() < 1e-12 && (iou(&b, &gt) - 0.8).abs() < 1e-12);
        let ranked = [PlacedBox { scene: 0, bbox: a }, PlacedBox { scene: 0, bbox: b }];
        assert_eq!(match_ranked_boxes(&ranked, &gts, 4, 0.5), (vec![true, false], 1));
        // wrong scene or wrong identity never matches
        let elsewhere = [PlacedBox { scene: 1, bbox: gt }];
        assert_eq!(match_ranked_boxes(&elsewhere, &gts, 4, 0.5), (vec![false], 1));
        assert_eq!(match_ranked_boxes(&ranked, &gts, 5, 0.5), (vec![false, false], 0));
        let exact = [PlacedBox { scene: 0, bbox: gt }];
        assert_eq!(match_ranked_boxes(&exact, &gts, 4, 0.5).0, vec![true]);
    }

    #[test]
    fn ranking_ties_and_scaling() {
        let sims = [0.2, 0.9, 0.2, -0.1, 0.9];
        assert_eq!(rank_by_similarity(&sims), vec![1, 4, 0, 2, 3]);
        let scaled: Vec<f64> = sims.iter().map(|s| s * 3.7).collect();
        assert_eq!(rank_by_similarity(&scaled), rank_by_similarity(&sims));
    }

    #[test]
    fn signed_zeros_tie() {
        assert_eq!(rank_by_similarity(&[-0.0, 0.0, -0.0]), vec![0, 1, 2]);
    }
}
