use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::objectives::{id_loss, id_loss_backward, mh_loss, total_loss, LossWeights};
use crate::tpan::{tpan_forward, tpan_forward_with_target, GuideSource, Mode, PrototypeTable, TpsModel};

/// One (crop, caption, identity) training triple.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub patch: Tensor,
    pub tokens: Vec<u32>,
    pub label: usize,
}

/// How guidance targets are obtained for a step.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    /// Built from the current forward pass according to `mode`.
    Live {
        mode: Mode,
        table: Option<&'a PrototypeTable>,
    },
    /// Given in advance, one per sample (`None` = no guidance).
    Fixed(&'a [Option<Tensor>]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub id: f64,
    pub mh: f64,
    pub guide: f64,
    pub total: f64,
    /// Target maps actually used, per sample.
    pub targets: Vec<Option<Tensor>>,
    /// Text features of the batch, for the prototype update.
    pub text_features: Vec<Vec<f64>>,
    /// Samples whose prototype row was not yet initialised.
    pub fallbacks: usize,
    /// Smallest relu-input magnitude in any image path of the batch.
    pub min_preactivation: f64,
}

/// Forward and backward over a batch; gradients accumulate into `model`.
///
/// `L_ID` is the batch mean of image plus text cross-entropy, `L_guide` the
/// batch mean of per-sample guidance, `L_MH` the bidirectional hinge.
pub fn forward_backward(
    model: &mut TpsModel,
    batch: &[Sample],
    targets: Targets<'_>,
    margin: f64,
    weights: &LossWeights,
) -> Result<StepOutput> {
    let n = batch.len();
    if let Targets::Fixed(t) = targets {
        if t.len() != n {
            return Err(Error::shape("forward_backward", "one target per sample"));
        }
    }
    let mut text_fwd = Vec::with_capacity(n);
    let mut img_fwd = Vec::with_capacity(n);
    let mut fallbacks = 0;
    let mut min_pre = f64::INFINITY;
    for (i, s) in batch.iter().enumerate() {
        let (f_t, trace) = model.forward_text(&s.tokens)?;
        let out = match targets {
            Targets::Live { mode, table } => {
                let guide = GuideSource::for_mode(mode, table, s.label, f_t.data())?;
                tpan_forward(model, &s.patch, guide)?
            }
            Targets::Fixed(t) => tpan_forward_with_target(model, &s.patch, t[i].as_ref())?,
        };
        fallbacks += usize::from(out.fell_back);
        min_pre = min_pre.min(out.forward.min_abs_preactivation());
        text_fwd.push((f_t, trace));
        img_fwd.push(out);
    }

    let scale = 1.0 / n as f64;
    let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
    let e_img: Vec<Vec<f64>> = img_fwd.iter().map(|o| o.forward.embedding.data().to_vec()).collect();
    let e_txt: Vec<Vec<f64>> = text_fwd.iter().map(|(f, _)| f.data().to_vec()).collect();

    let mh = mh_loss(&e_img, &e_txt, &labels, margin)?;
    let mut id = 0.0;
    let mut guide = 0.0;
    let mut g_img = Vec::with_capacity(n);
    let mut g_txt = Vec::with_capacity(n);
    for i in 0..n {
        let (li, gi) = id_loss_backward(&mut model.classifier, &e_img[i], labels[i], weights.id * scale)?;
        let (lt, gt) = id_loss_backward(&mut model.classifier, &e_txt[i], labels[i], weights.id * scale)?;
        id += (li + lt) * scale;
        guide += img_fwd[i].guide * scale;
        g_img.push(add_scaled(&gi, &mh.grad_image[i], weights.mh));
        g_txt.push(add_scaled(&gt, &mh.grad_text[i], weights.mh));
    }
    let total = total_loss(id, mh.loss, guide, weights)?;

    let mut used = Vec::with_capacity(n);
    for (out, g_e) in img_fwd.into_iter().zip(&g_img) {
        let g_a: Vec<f64> = out.guide_grad.iter().map(|g| g * weights.guide * scale).collect();
        used.push(out.target);
        model.backward_image(out.forward, g_e, &g_a)?;
    }
    for ((_, trace), g) in text_fwd.into_iter().zip(&g_txt) {
        model.backward_text(trace, g)?;
    }
    Ok(StepOutput {
        id,
        mh: mh.loss,
        guide,
        total,
        targets: used,
        text_features: e_txt,
        fallbacks,
        min_preactivation: min_pre,
    })
}

fn add_scaled(a: &[f64], b: &[f64], s: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

/// Loss value only, with the same definition as [`forward_backward`].
pub fn forward_loss(
    model: &TpsModel,
    batch: &[Sample],
    targets: Targets<'_>,
    margin: f64,
    weights: &LossWeights,
) -> Result<f64> {
    let n = batch.len();
    let scale = 1.0 / n as f64;
    let mut e_img = Vec::with_capacity(n);
    let mut e_txt = Vec::with_capacity(n);
    let mut id = 0.0;
    let mut guide = 0.0;
    for (i, s) in batch.iter().enumerate() {
        let f_t = model.embed_text(&s.tokens)?;
        let out = match targets {
            Targets::Live { mode, table } => {
                let g = GuideSource::for_mode(mode, table, s.label, f_t.data())?;
                tpan_forward(model, &s.patch, g)?
            }
            Targets::Fixed(t) => tpan_forward_with_target(model, &s.patch, t[i].as_ref())?,
        };
        id += (id_loss(&model.classifier, out.forward.embedding.data(), s.label)?
            + id_loss(&model.classifier, f_t.data(), s.label)?)
            * scale;
        guide += out.guide * scale;
        e_img.push(out.forward.embedding.into_data());
        e_txt.push(f_t.into_data());
    }
    let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
    let mh = mh_loss(&e_img, &e_txt, &labels, margin)?;
    total_loss(id, mh.loss, guide, weights)
}
