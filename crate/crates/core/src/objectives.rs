//! Identification loss, bidirectional hardest-negative hinge loss, and their sum.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Parameter, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Linear identity classifier shared by the image and text branches.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedClassifier {
    /// `[N, D]`
    pub weight: Parameter,
}

impl SharedClassifier {
    pub fn new(num_identities: usize, dim: usize, rng: &mut Rng) -> Self {
        Self {
            weight: Parameter::new(
                "classifier.weight",
                Tensor::randn(&[num_identities, dim], (1.0 / dim as f64).sqrt(), rng),
            ),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weight.tensor.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.weight.tensor.shape()[1]
    }

    pub fn logits(&self, e: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        if e.len() != d {
            return Err(Error::shape(
                "id_loss",
                format!("embedding of length {} for classifier width {d}", e.len()),
            ));
        }
        Ok(self
            .weight
            .tensor
            .data()
            .chunks(d)
            .map(|row| row.iter().zip(e).map(|(w, x)| w * x).sum())
            .collect())
    }
}

fn log_softmax_at(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let probs = logits.iter().map(|l| (l - m).exp() / z).collect();
    (logits[label] - m - z.ln(), probs)
}

fn check_label(c: &SharedClassifier, label: usize) -> Result<()> {
    if label >= c.num_classes() {
        return Err(Error::IdentityOutOfRange {
            index: label,
            len: c.num_classes(),
        });
    }
    Ok(())
}

/// Cross-entropy of `softmax(W e)` at `label`.
pub fn id_loss(c: &SharedClassifier, e: &[f64], label: usize) -> Result<f64> {
    check_label(c, label)?;
    let logits = c.logits(e)?;
    Ok(-log_softmax_at(&logits, label).0)
}

/// Like [`id_loss`], also accumulating `scale · ∂/∂W` into the classifier and
/// returning `scale · ∂/∂e`.
pub fn id_loss_backward(
    c: &mut SharedClassifier,
    e: &[f64],
    label: usize,
    scale: f64,
) -> Result<(f64, Vec<f64>)> {
    check_label(c, label)?;
    let logits = c.logits(e)?;
    let (lp, mut g) = log_softmax_at(&logits, label);
    g[label] -= 1.0;
    let d = c.dim();
    let mut g_e = vec![0.0; d];
    for (row, gk) in c.weight.tensor.data().chunks(d).zip(&g) {
        for (ge, w) in g_e.iter_mut().zip(row) {
            *ge += scale * gk * w;
        }
    }
    let wg = c.weight.tensor.grad_mut();
    for (k, gk) in g.iter().enumerate() {
        for (j, x) in e.iter().enumerate() {
            wg[k * d + j] += scale * gk * x;
        }
    }
    Ok((-lp, g_e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhOutput {
    pub loss: f64,
    /// `∂loss/∂e_i` per pair.
    pub grad_image: Vec<Vec<f64>>,
    /// `∂loss/∂e_t` per pair.
    pub grad_text: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the most similar cross-identity candidate; ties go to the lowest index.
fn hardest(anchor: &[f64], candidates: &[Vec<f64>], labels: &[usize], own: usize) -> usize {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for (j, c) in candidates.iter().enumerate() {
        if labels[j] == labels[own] {
            continue;
        }
        let s = dot(anchor, c);
        if s > best.1 {
            best = (j, s);
        }
    }
    best.0
}

/// Bidirectional max-of-hinges over the batch, mean over pairs.
///
/// Embeddings are expected unit-norm, so the dot product is the cosine.
pub fn mh_loss(
    image: &[Vec<f64>],
    text: &[Vec<f64>],
    labels: &[usize],
    margin: f64,
) -> Result<MhOutput> {
    let n = labels.len();
    if image.len() != n || text.len() != n {
        return Err(Error::shape(
            "mh_loss",
            format!("{} images, {} texts, {n} labels", image.len(), text.len()),
        ));
    }
    if n < 2 || labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::Invalid(
            "mh_loss needs at least two distinct identities in the batch".into(),
        ));
    }
    let d = image[0].len();
    let mut grad_image = vec![vec![0.0; d]; n];
    let mut grad_text = vec![vec![0.0; d]; n];
    let mut loss = 0.0;
    let inv = 1.0 / n as f64;
    for i in 0..n {
        let pos = dot(&image[i], &text[i]);

        let j = hardest(&image[i], text, labels, i);
        let h = margin + dot(&image[i], &text[j]) - pos;
        if h > 0.0 {
            loss += h;
            for k in 0..d {
                grad_image[i][k] += inv * (text[j][k] - text[i][k]);
                grad_text[j][k] += inv * image[i][k];
                grad_text[i][k] -= inv * image[i][k];
            }
        }

        let j = hardest(&text[i], image, labels, i);
        let h = margin + dot(&text[i], &image[j]) - pos;
        if h > 0.0 {
            loss += h;
            for k in 0..d {
                grad_text[i][k] += inv * (image[j][k] - image[i][k]);
                grad_image[j][k] += inv * text[i][k];
                grad_image[i][k] -= inv * text[i][k];
            }
        }
    }
    Ok(MhOutput {
        loss: loss * inv,
        grad_image,
        grad_text,
    })
}

/// Multipliers on the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub id: f64,
    pub mh: f64,
    pub guide: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            id: 1.0,
            mh: 1.0,
            guide: 1.0,
        }
    }
}

pub fn total_loss(id: f64, mh: f64, guide: f64, w: &LossWeights) -> Result<f64> {
    if ![id, mh, guide].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "loss terms id={id} mh={mh} guide={guide}"
        )));
    }
    Ok(w.id * id + w.mh * mh + w.guide * guide)
}
