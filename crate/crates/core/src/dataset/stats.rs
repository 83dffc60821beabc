use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::types::Dataset;

/// Upper edges of the sentence-length bins; the last bin is open-ended.
/// Bin 0 is the `(0, 20]` underflow bin.
pub const LENGTH_BINS: [(usize, Option<usize>); 7] = [
    (0, Some(20)),
    (20, Some(30)),
    (30, Some(40)),
    (40, Some(50)),
    (50, Some(60)),
    (60, Some(70)),
    (70, None),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBin {
    pub label: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub scenes: usize,
    pub boxes: usize,
    pub labeled_boxes: usize,
    pub captions: usize,
    pub identities: usize,
    pub mean_caption_length: f64,
    pub max_caption_length: usize,
    pub length_histogram: Vec<LengthBin>,
}

fn bin_label(lo: usize, hi: Option<usize>) -> String {
    match hi {
        Some(hi) => format!("({lo},{hi}]"),
        None => format!("({lo},inf)"),
    }
}

pub fn dataset_stats(d: &Dataset) -> StatsReport {
    let mut counts = [0usize; LENGTH_BINS.len()];
    let mut total = 0usize;
    let mut max_len = 0usize;
    for c in &d.captions {
        let len = c.length();
        total += len;
        max_len = max_len.max(len);
        let bin = LENGTH_BINS
            .iter()
            .position(|&(lo, hi)| len > lo && hi.is_none_or(|h| len <= h))
            .unwrap_or(0);
        counts[bin] += 1;
    }
    StatsReport {
        scenes: d.scenes.len(),
        boxes: d.num_boxes(),
        labeled_boxes: d.num_labeled_boxes(),
        captions: d.captions.len(),
        identities: d.num_identities,
        mean_caption_length: if d.captions.is_empty() {
            0.0
        } else {
            total as f64 / d.captions.len() as f64
        },
        max_caption_length: max_len,
        length_histogram: LENGTH_BINS
            .iter()
            .zip(counts)
            .map(|(&(lo, hi), count)| LengthBin {
                label: bin_label(lo, hi),
                count,
            })
            .collect(),
    }
}

impl StatsReport {
    pub fn count(&self, label: &str) -> Option<usize> {
        self.length_histogram
            .iter()
            .find(|b| b.label == label)
            .map(|b| b.count)
    }

    /// Plain-text table: one header row of bins, one row of counts.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "scenes {}  boxes {} ({} labeled)  captions {}  identities {}",
            self.scenes, self.boxes, self.labeled_boxes, self.captions, self.identities
        );
        let _ = writeln!(
            s,
            "mean caption length {:.2}  longest {}",
            self.mean_caption_length, self.max_caption_length
        );
        let width = 10;
        let _ = write!(s, "| {:<6} |", "Length");
        for b in &self.length_histogram {
            let _ = write!(s, " {:>width$} |", b.label);
        }
        let _ = write!(s, "\n| {:<6} |", "Num");
        for b in &self.length_histogram {
            let _ = write!(s, " {:>width$} |", b.count);
        }
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{BoxRef, Caption, Language};

    fn with_lengths(lengths: &[usize]) -> Dataset {
        Dataset {
            captions: lengths
                .iter()
                .map(|&n| Caption {
                    tokens: vec![0; n],
                    language: Language::Zh,
                    identity: 0,
                    box_ref: BoxRef {
                        scene_id: "s".into(),
                        box_index: 0,
                    },
                })
                .collect(),
            ..Dataset::default()
        }
    }

    #[test]
    fn counts_land_in_half_open_bins() {
        let r = dataset_stats(&with_lengths(&[25, 35, 35]));
        assert_eq!(r.count("(20,30]"), Some(1));
        assert_eq!(r.count("(30,40]"), Some(2));
        assert_eq!(r.count("(0,20]"), Some(0));
        let r = dataset_stats(&with_lengths(&[20, 21, 30, 70, 71, 128]));
        let counts: Vec<usize> = r.length_histogram.iter().map(|b| b.count).collect();
        assert_eq!(counts, vec![1, 2, 0, 0, 0, 1, 2]);
    }

    #[test]
    fn empty_dataset_is_all_zero() {
        let r = dataset_stats(&Dataset::default());
        assert_eq!(r.captions, 0);
        assert_eq!(r.mean_caption_length, 0.0);
        assert!(r.length_histogram.iter().all(|b| b.count == 0));
        assert!(r.to_table().contains("(70,inf)"));
    }
}
