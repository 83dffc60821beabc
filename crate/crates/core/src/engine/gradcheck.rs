//! Finite-difference checks of every layer, loss and the composite objective.

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    activation, activation_backward, conv2d, conv2d_backward, grad_check, grad_check_coords,
    l2_normalize, l2_normalize_backward, linear, linear_backward, pool, pool_backward, Activation,
    ConvSpec, PadMode, Pool, Tensor,
};
use crate::encoders::{FeatureReducer, ImageEncoder, TextEncoder};
use crate::error::{Error, Result};
use crate::objectives::{id_loss_backward, mh_loss, SharedClassifier};
use crate::rng::{stream, Rng, Stream};
use crate::tpan::{
    apply_channel_attention, apply_channel_attention_backward, attend_pool, attend_pool_backward,
    guidance_loss, ChannelAttention, Mode, PrototypeTable, SpatialAttention, TpsModel,
};

use super::step::{forward_backward, forward_loss, Sample, Targets};
use super::RunConfig;

pub const SMOOTH_TOL: f64 = 1e-6;
pub const KINKED_TOL: f64 = 1e-4;
/// Distance kept between every relu / hinge argument and its kink.
const KINK_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub coordinates: usize,
    pub passed: bool,
}

/// Evidence that nothing is differentiated through the guidance target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopGradient {
    /// Largest gradient difference between a target built inside the step and
    /// the same target passed in as a constant.
    pub live_vs_constant: f64,
    /// Largest gradient change after perturbing prototype rows of identities
    /// outside the batch.
    pub untouched_rows: f64,
    /// Analytic gradient against differences that rebuild the target at each
    /// perturbed point; large when the stop-gradient is in effect.
    pub live_target_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub entries: Vec<GradEntry>,
    pub stop_gradient: StopGradient,
    /// Micro-batch draws rejected for lying too close to a kink.
    pub resamples: usize,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed) && self.stop_gradient.passed
    }

    pub fn failures(&self) -> Vec<&GradEntry> {
        self.entries.iter().filter(|e| !e.passed).collect()
    }

    pub fn entry(&self, name: &str) -> Option<&GradEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<28} {:>12} {:>9} {:>7}  ok\n", "component", "rel error", "tol", "coords");
        for e in &self.entries {
            s.push_str(&format!(
                "{:<28} {:>12.3e} {:>9.0e} {:>7}  {}\n",
                e.name,
                e.max_rel_error,
                e.tolerance,
                e.coordinates,
                if e.passed { "yes" } else { "NO" }
            ));
        }
        let sg = &self.stop_gradient;
        s.push_str(&format!(
            "stop-gradient: live vs constant {:e}, untouched rows {:e}, live-target rel error {:.3e}  {}\n",
            sg.live_vs_constant,
            sg.untouched_rows,
            sg.live_target_rel_error,
            if sg.passed { "yes" } else { "NO" }
        ));
        s
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn entry(name: &str, tol: f64, r: crate::autodiff::GradCheck) -> GradEntry {
    GradEntry {
        name: name.into(),
        max_rel_error: r.max_rel_error,
        tolerance: tol,
        coordinates: r.coordinates,
        passed: r.max_rel_error < tol,
    }
}

fn randn(shape: &[usize], rng: &mut Rng) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

fn unit(rng: &mut Rng, d: usize) -> Vec<f64> {
    let v = randn(&[d], rng).into_data();
    let n = dot(&v, &v).sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn grad_of(t: &Tensor) -> Vec<f64> {
    t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()])
}

fn layer_checks(eps: f64, rng: &mut Rng) -> Result<Vec<GradEntry>> {
    let mut out = Vec::new();

    // linear: θ = [x, W, b]
    {
        let c = randn(&[3], rng).into_data();
        let theta = [randn(&[4], rng).into_data(), randn(&[12], rng).into_data(), randn(&[3], rng).into_data()].concat();
        let r = grad_check(&theta, eps, |t| {
            let mut x = Tensor::vector(t[..4].to_vec());
            let mut w = Tensor::new(vec![3, 4], t[4..16].to_vec()).expect("shape");
            let mut b = Tensor::vector(t[16..].to_vec());
            let y = linear(&x, &w, Some(&b)).expect("linear");
            linear_backward(&mut x, &mut w, Some(&mut b), &c).expect("backward");
            (dot(y.data(), &c), [grad_of(&x), grad_of(&w), grad_of(&b)].concat())
        })?;
        out.push(entry("linear", SMOOTH_TOL, r));
    }

    // conv2d, both padding modes
    for (name, spec) in [
        ("conv2d/zeros", ConvSpec { stride: 1, pad: 1, mode: PadMode::Zeros }),
        ("conv2d/replicate-stride2", ConvSpec { stride: 2, pad: 1, mode: PadMode::Replicate }),
    ] {
        let x0 = randn(&[2, 5, 5], rng);
        let k0 = randn(&[3, 2, 3, 3], rng);
        let b0 = randn(&[3], rng);
        let y_len = conv2d(&x0, &k0, Some(&b0), spec)?.len();
        let c = randn(&[y_len], rng).into_data();
        let theta = [x0.data(), k0.data(), b0.data()].concat();
        let r = grad_check(&theta, eps, |t| {
            let mut x = Tensor::new(vec![2, 5, 5], t[..50].to_vec()).expect("shape");
            let mut k = Tensor::new(vec![3, 2, 3, 3], t[50..104].to_vec()).expect("shape");
            let mut b = Tensor::vector(t[104..].to_vec());
            let y = conv2d(&x, &k, Some(&b), spec).expect("conv");
            conv2d_backward(&mut x, &mut k, Some(&mut b), spec, &c).expect("backward");
            (dot(y.data(), &c), [grad_of(&x), grad_of(&k), grad_of(&b)].concat())
        })?;
        out.push(entry(name, SMOOTH_TOL, r));
    }

    // sigmoid
    {
        let x0 = randn(&[6], rng);
        let c = randn(&[6], rng).into_data();
        let r = grad_check(x0.data(), eps, |t| {
            let mut x = Tensor::vector(t.to_vec());
            let y = activation(&x, Activation::Sigmoid);
            activation_backward(&mut x, &y, Activation::Sigmoid, &c).expect("backward");
            (dot(y.data(), &c), grad_of(&x))
        })?;
        out.push(entry("sigmoid", SMOOTH_TOL, r));
    }

    // pools
    for (name, kind) in [("spatial_mean", Pool::SpatialMean), ("channel_mean", Pool::ChannelMean)] {
        let x0 = randn(&[3, 2, 4], rng);
        let n_out = pool(&x0, kind)?.len();
        let c = randn(&[n_out], rng).into_data();
        let r = grad_check(x0.data(), eps, |t| {
            let mut x = Tensor::new(vec![3, 2, 4], t.to_vec()).expect("shape");
            let y = pool(&x, kind).expect("pool");
            pool_backward(&mut x, kind, &c).expect("backward");
            (dot(y.data(), &c), grad_of(&x))
        })?;
        out.push(entry(name, SMOOTH_TOL, r));
    }

    // l2 normalisation
    {
        let x0 = randn(&[5], rng);
        let c = randn(&[5], rng).into_data();
        let r = grad_check(x0.data(), eps, |t| {
            let mut x = Tensor::vector(t.to_vec());
            let (y, n) = l2_normalize(&x).expect("nonzero");
            l2_normalize_backward(&mut x, &y, n, &c).expect("backward");
            (dot(y.data(), &c), grad_of(&x))
        })?;
        out.push(entry("l2_normalize", SMOOTH_TOL, r));
    }
    Ok(out)
}

fn module_checks(eps: f64, rng: &mut Rng) -> Result<Vec<GradEntry>> {
    let mut out = Vec::new();

    // image encoder (relu stack), resampled away from kinks
    {
        let (enc, patch) = loop {
            let enc = ImageEncoder::new(&[3, 4, 6], rng);
            let patch = randn(&[3, 8, 6], rng);
            if enc.forward(&patch)?.1.min_abs_preactivation() > KINK_MARGIN {
                break (enc, patch);
            }
        };
        let n_out = enc.forward(&patch)?.0.len();
        let c = randn(&[n_out], rng).into_data();
        let theta: Vec<f64> = enc.params().iter().flat_map(|p| p.tensor.data().to_vec()).collect();
        let r = grad_check(&theta, eps, |t| {
            let mut e = enc.clone();
            let mut off = 0;
            for p in e.params_mut() {
                let n = p.tensor.len();
                p.tensor.data_mut().copy_from_slice(&t[off..off + n]);
                off += n;
            }
            let (f, tr) = e.forward(&patch).expect("forward");
            e.backward(tr, &c).expect("backward");
            (dot(f.data(), &c), e.params().iter().flat_map(|p| grad_of(&p.tensor)).collect())
        })?;
        out.push(entry("image_encoder", KINKED_TOL, r));
    }

    // feature reducer: θ = [W, F_i]
    {
        let red = FeatureReducer::new(5, 4, rng);
        let f0 = randn(&[5, 3, 2], rng);
        let c = randn(&[24], rng).into_data();
        let theta = [red.weight.tensor.data(), f0.data()].concat();
        let r = grad_check(&theta, eps, |t| {
            let mut r = red.clone();
            r.weight.tensor.data_mut().copy_from_slice(&t[..20]);
            let x = Tensor::new(vec![5, 3, 2], t[20..].to_vec()).expect("shape");
            let y = r.forward(&x).expect("forward");
            let gx = r.backward(&x, &c).expect("backward");
            (dot(y.data(), &c), [grad_of(&r.weight.tensor), gx].concat())
        })?;
        out.push(entry("feature_reducer", SMOOTH_TOL, r));
    }

    // text encoder
    {
        let enc = TextEncoder::new(7, 5, 4, rng);
        let tokens: Vec<u32> = (0..6).map(|_| rng.random_range(0..7)).collect();
        let c = randn(&[4], rng).into_data();
        let theta: Vec<f64> = enc.params().iter().flat_map(|p| p.tensor.data().to_vec()).collect();
        let r = grad_check(&theta, eps, |t| {
            let mut e = enc.clone();
            let mut off = 0;
            for p in e.params_mut() {
                let n = p.tensor.len();
                p.tensor.data_mut().copy_from_slice(&t[off..off + n]);
                p.tensor.clear_grad();
                off += n;
            }
            let (f, tr) = e.forward(&tokens).expect("forward");
            e.backward(tr, &c).expect("backward");
            (dot(f.data(), &c), e.params().iter().flat_map(|p| grad_of(&p.tensor)).collect())
        })?;
        out.push(entry("text_encoder", SMOOTH_TOL, r));
    }

    // channel attention: θ = [W1, W2, f_c]
    {
        let (ca, x0) = loop {
            let ca = ChannelAttention::new(8, 2, rng)?;
            let x0 = randn(&[8], rng);
            if ca.forward(&x0)?.min_abs_preactivation() > KINK_MARGIN {
                break (ca, x0);
            }
        };
        let c = randn(&[8], rng).into_data();
        let theta = [ca.gate.w1.tensor.data(), ca.gate.w2.tensor.data(), x0.data()].concat();
        let r = grad_check(&theta, eps, |t| {
            let mut g = ca.clone();
            g.gate.w1.tensor.data_mut().copy_from_slice(&t[..32]);
            g.gate.w2.tensor.data_mut().copy_from_slice(&t[32..64]);
            let x = Tensor::vector(t[64..].to_vec());
            let tr = g.forward(&x).expect("forward");
            let y = tr.output().data().to_vec();
            let gx = g.backward(tr, &c).expect("backward");
            (dot(&y, &c), [grad_of(&g.gate.w1.tensor), grad_of(&g.gate.w2.tensor), gx].concat())
        })?;
        out.push(entry("channel_attention", KINKED_TOL, r));
    }

    // spatial attention: θ = [W1, W2, f_s]
    {
        let (sa, x0) = loop {
            let sa = SpatialAttention::new(3, 2, 2, rng)?;
            let x0 = randn(&[3, 2], rng);
            if sa.forward(&x0)?.1.min_abs_preactivation() > KINK_MARGIN {
                break (sa, x0);
            }
        };
        let c = randn(&[6], rng).into_data();
        let theta = [sa.gate.w1.tensor.data(), sa.gate.w2.tensor.data(), x0.data()].concat();
        let r = grad_check(&theta, eps, |t| {
            let mut g = sa.clone();
            g.gate.w1.tensor.data_mut().copy_from_slice(&t[..18]);
            g.gate.w2.tensor.data_mut().copy_from_slice(&t[18..36]);
            let x = Tensor::new(vec![3, 2], t[36..].to_vec()).expect("shape");
            let (y, tr) = g.forward(&x).expect("forward");
            let gx = g.backward(tr, &c).expect("backward");
            (dot(y.data(), &c), [grad_of(&g.gate.w1.tensor), grad_of(&g.gate.w2.tensor), gx].concat())
        })?;
        out.push(entry("spatial_attention", KINKED_TOL, r));
    }

    // channel gating product: θ = [A_c, F_c]
    {
        let theta = [randn(&[3], rng).into_data(), randn(&[12], rng).into_data()].concat();
        let c = randn(&[12], rng).into_data();
        let r = grad_check(&theta, eps, |t| {
            let a = Tensor::vector(t[..3].to_vec());
            let f = Tensor::new(vec![3, 2, 2], t[3..].to_vec()).expect("shape");
            let y = apply_channel_attention(&a, &f).expect("forward");
            let (ga, gf) = apply_channel_attention_backward(&a, &f, &c).expect("backward");
            (dot(y.data(), &c), [ga, gf].concat())
        })?;
        out.push(entry("apply_channel_attention", SMOOTH_TOL, r));
    }

    // attended pooling: θ = [F̂, A]
    {
        let f0 = randn(&[4, 3, 2], rng).into_data();
        let a0: Vec<f64> = (0..6).map(|_| rng.random_range(0.1..0.9)).collect();
        let c = randn(&[4], rng).into_data();
        let theta = [f0, a0].concat();
        let r = grad_check(&theta, eps, |t| {
            let f = Tensor::new(vec![4, 3, 2], t[..24].to_vec()).expect("shape");
            let a = Tensor::new(vec![3, 2], t[24..].to_vec()).expect("shape");
            let (e, tr) = attend_pool(&f, &a).expect("forward");
            let (gf, ga) = attend_pool_backward(&f, &a, &tr, &c).expect("backward");
            (dot(e.data(), &c), [gf, ga].concat())
        })?;
        out.push(entry("attend_pool", SMOOTH_TOL, r));
    }

    // guidance loss w.r.t. A
    {
        let target = Tensor::new(vec![3, 2], (0..6).map(|_| rng.random_range(0.0..1.0)).collect())?;
        let a0: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
        let r = grad_check(&a0, eps, |t| {
            let a = Tensor::new(vec![3, 2], t.to_vec()).expect("shape");
            guidance_loss(&target, &a).expect("same shape")
        })?;
        out.push(entry("guidance_loss", SMOOTH_TOL, r));
    }

    // identification loss: θ = [W, e]
    {
        let cls = SharedClassifier::new(5, 4, rng);
        let theta = [cls.weight.tensor.data().to_vec(), unit(rng, 4)].concat();
        let r = grad_check(&theta, eps, |t| {
            let mut c = cls.clone();
            c.weight.tensor.data_mut().copy_from_slice(&t[..20]);
            let (l, ge) = id_loss_backward(&mut c, &t[20..], 2, 1.0).expect("loss");
            (l, [grad_of(&c.weight.tensor), ge].concat())
        })?;
        out.push(entry("id_loss", SMOOTH_TOL, r));
    }

    // max-of-hinges, resampled away from hinge and argmax kinks
    {
        let (n, d, labels) = (6, 5, [0usize, 0, 1, 2, 2, 3]);
        let (img, txt) = loop {
            let img: Vec<Vec<f64>> = (0..n).map(|_| unit(rng, d)).collect();
            let txt: Vec<Vec<f64>> = (0..n).map(|_| unit(rng, d)).collect();
            if hinge_clearance(&img, &txt, &labels, 0.2) > KINK_MARGIN {
                break (img, txt);
            }
        };
        let theta: Vec<f64> = img.iter().chain(&txt).flatten().copied().collect();
        let r = grad_check(&theta, eps, |t| {
            let rows: Vec<Vec<f64>> = t.chunks(d).map(<[f64]>::to_vec).collect();
            let o = mh_loss(&rows[..n], &rows[n..], &labels, 0.2).expect("loss");
            (o.loss, o.grad_image.iter().chain(&o.grad_text).flatten().copied().collect())
        })?;
        out.push(entry("mh_loss", SMOOTH_TOL, r));
    }
    Ok(out)
}

/// Smallest distance of any hinge argument or hardest-negative gap from a kink.
pub fn hinge_clearance(img: &[Vec<f64>], txt: &[Vec<f64>], labels: &[usize], margin: f64) -> f64 {
    let mut worst = f64::INFINITY;
    for i in 0..labels.len() {
        let pos = dot(&img[i], &txt[i]);
        for (anchor, pool) in [(&img[i], txt), (&txt[i], img)] {
            let mut sims: Vec<f64> = (0..labels.len())
                .filter(|&j| labels[j] != labels[i])
                .map(|j| dot(anchor, &pool[j]))
                .collect();
            sims.sort_by(|a, b| b.total_cmp(a));
            worst = worst.min((margin + sims[0] - pos).abs());
            if let Some(second) = sims.get(1) {
                worst = worst.min(sims[0] - second);
            }
        }
    }
    worst
}

/// A 2-identity, 2-sample micro-batch at the configured architecture.
fn micro_batch(cfg: &RunConfig, vocab: u32, rng: &mut Rng) -> Vec<Sample> {
    let (h, w) = (cfg.model.crop_height, cfg.model.crop_width);
    (0..4)
        .map(|i| {
            let patch = Tensor::new(
                vec![3, h, w],
                (0..3 * h * w).map(|_| rng.random_range(0.0..1.0)).collect(),
            )
            .expect("shape");
            let len = rng.random_range(4..10);
            Sample {
                patch,
                tokens: (0..len).map(|_| rng.random_range(0..vocab)).collect(),
                label: i / 2,
            }
        })
        .collect()
}

/// Coordinates to perturb: all of a small tensor, an even sample of a big one.
fn pick_coords(model: &TpsModel, per_tensor: usize, rng: &mut Rng) -> Vec<usize> {
    let mut coords = Vec::new();
    let mut off = 0;
    for p in model.params() {
        let n = p.tensor.len();
        if n <= per_tensor {
            coords.extend(off..off + n);
        } else {
            let mut idx = sample(rng, n, per_tensor).into_vec();
            idx.sort_unstable();
            coords.extend(idx.into_iter().map(|i| off + i));
        }
        off += n;
    }
    coords
}

struct Composite {
    model: TpsModel,
    batch: Vec<Sample>,
    table: PrototypeTable,
}

fn composite_setup(cfg: &RunConfig, rng: &mut Rng, resamples: &mut usize) -> Result<Composite> {
    const VOCAB: u32 = 24;
    const IDS: usize = 4;
    for _ in 0..500 {
        let model = TpsModel::new(cfg.model.clone(), VOCAB as usize, IDS, rng)?;
        let batch = micro_batch(cfg, VOCAB, rng);
        let mut table = PrototypeTable::new(IDS, cfg.model.dim, cfg.train.lambda)?;
        for k in 0..IDS {
            table.set_row(k, &unit(rng, cfg.model.dim))?;
        }
        let fwd: Vec<_> = batch
            .iter()
            .map(|s| model.forward_image(&s.patch))
            .collect::<Result<_>>()?;
        let relu_ok = fwd.iter().all(|f| f.min_abs_preactivation() > KINK_MARGIN);
        let img: Vec<Vec<f64>> = fwd.iter().map(|f| f.embedding.data().to_vec()).collect();
        let txt: Vec<Vec<f64>> = batch
            .iter()
            .map(|s| model.embed_text(&s.tokens).map(Tensor::into_data))
            .collect::<Result<_>>()?;
        let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
        if relu_ok && hinge_clearance(&img, &txt, &labels, cfg.train.margin) > KINK_MARGIN {
            return Ok(Composite { model, batch, table });
        }
        *resamples += 1;
    }
    Err(Error::Invalid("no kink-free micro-batch found".into()))
}

fn analytic(c: &Composite, targets: Targets<'_>, cfg: &RunConfig) -> Result<(Vec<f64>, Vec<Option<Tensor>>)> {
    let mut m = c.model.clone();
    m.zero_grads();
    let out = forward_backward(&mut m, &c.batch, targets, cfg.train.margin, &cfg.train.loss_weights)?;
    Ok((m.flat_grads(), out.targets))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Runs every check; see [`GradReport`].
pub fn grad_check_all(cfg: &RunConfig, eps: f64) -> Result<GradReport> {
    let mut rng = stream(cfg.seed, Stream::Check);
    let mut entries = layer_checks(eps, &mut rng)?;
    entries.extend(module_checks(eps, &mut rng)?);

    let mut resamples = 0;
    let comp = composite_setup(cfg, &mut rng, &mut resamples)?;
    let theta = comp.model.flat_params();
    let coords = pick_coords(&comp.model, 24, &mut rng);
    let fd = |targets: &[Option<Tensor>], c: &Composite, g: &[f64]| {
        grad_check_coords(&theta, g, &coords, eps, |t| {
            let mut m = c.model.clone();
            m.set_flat_params(t).expect("length");
            forward_loss(&m, &c.batch, Targets::Fixed(targets), cfg.train.margin, &cfg.train.loss_weights)
                .expect("loss")
        })
    };

    let mut live_vs_constant: f64 = 0.0;
    let mut tpan_targets = Vec::new();
    let mut tpan_grad = Vec::new();
    for mode in Mode::ALL {
        let live = Targets::Live { mode, table: Some(&comp.table) };
        let (g, targets) = analytic(&comp, live, cfg)?;
        let (g_fixed, _) = analytic(&comp, Targets::Fixed(&targets), cfg)?;
        live_vs_constant = live_vs_constant.max(max_abs_diff(&g, &g_fixed));
        let r = fd(&targets, &comp, &g)?;
        entries.push(entry(&format!("composite/{mode}"), KINKED_TOL, r));
        if mode == Mode::Tpan {
            tpan_targets = targets;
            tpan_grad = g;
        }
    }

    // rows 2 and 3 belong to no identity in the micro-batch
    let mut moved = comp.table.clone();
    for k in 2..moved.len() {
        moved.set_row(k, &unit(&mut rng, cfg.model.dim))?;
    }
    let shifted = Composite {
        model: comp.model.clone(),
        batch: comp.batch.clone(),
        table: moved,
    };
    let (g_moved, _) = analytic(&shifted, Targets::Live { mode: Mode::Tpan, table: Some(&shifted.table) }, cfg)?;
    let untouched_rows = max_abs_diff(&tpan_grad, &g_moved);

    // ablation: differences that let the target follow the parameters
    let few: Vec<usize> = coords.iter().copied().step_by(4).collect();
    let live_fd = grad_check_coords(&theta, &tpan_grad, &few, eps, |t| {
        let mut m = comp.model.clone();
        m.set_flat_params(t).expect("length");
        forward_loss(
            &m,
            &comp.batch,
            Targets::Live { mode: Mode::Tpan, table: Some(&comp.table) },
            cfg.train.margin,
            &cfg.train.loss_weights,
        )
        .expect("loss")
    })?;
    drop(tpan_targets);

    let stop_gradient = StopGradient {
        live_vs_constant,
        untouched_rows,
        live_target_rel_error: live_fd.max_rel_error,
        passed: live_vs_constant == 0.0 && untouched_rows == 0.0 && live_fd.max_rel_error > KINKED_TOL,
    };
    Ok(GradReport {
        entries,
        stop_gradient,
        resamples,
    })
}
