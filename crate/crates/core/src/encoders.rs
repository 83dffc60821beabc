//! Toy dual-path feature extractors.
//!
//! Image: a stack of stride-2 3×3 convolutions with replicate padding and relu,
//! producing `F_i: [C, H, W]`, followed by a per-location projection to
//! `F_c: [D, H, W]`. Text: a position-weighted mean of token embeddings,
//! projected to `D` and L2-normalised.

use crate::autodiff::{
    activation, activation_backward, conv2d, conv2d_backward, l2_normalize,
    l2_normalize_backward, linear, linear_backward, Activation, ConvSpec, PadMode, Parameter,
    Tensor,
};
use crate::dataset::MAX_CAPTION_LEN;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weight: Parameter,
    pub bias: Parameter,
    pub spec: ConvSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEncoder {
    pub layers: Vec<ConvLayer>,
}

/// Activations kept by [`ImageEncoder::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ImageTrace {
    inputs: Vec<Tensor>,
    pre: Vec<Tensor>,
    post: Vec<Tensor>,
}

impl ImageTrace {
    /// Distance of the closest relu input to its kink.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.pre
            .iter()
            .flat_map(|t| t.data())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

impl ImageEncoder {
    /// `channels` lists the input channel count followed by each layer's
    /// output channels, e.g. `[3, 16, 32, 32]`.
    pub fn new(channels: &[usize], rng: &mut Rng) -> Self {
        let layers = channels
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (cin, cout) = (w[0], w[1]);
                let std = (2.0 / (cin * 9) as f64).sqrt();
                ConvLayer {
                    weight: Parameter::new(
                        format!("image.conv{i}.weight"),
                        Tensor::randn(&[cout, cin, 3, 3], std, rng),
                    ),
                    bias: Parameter::new(format!("image.conv{i}.bias"), Tensor::zeros(&[cout])),
                    spec: ConvSpec {
                        stride: 2,
                        pad: 1,
                        mode: PadMode::Replicate,
                    },
                }
            })
            .collect();
        Self { layers }
    }

    pub fn in_channels(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.tensor.shape()[1])
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.tensor.shape()[0])
    }

    pub fn forward(&self, patch: &Tensor) -> Result<(Tensor, ImageTrace)> {
        if patch.shape().len() != 3 || patch.shape()[0] != self.in_channels() {
            return Err(Error::shape(
                "encode_image",
                format!("expected [{}, h, w] patch, got {:?}", self.in_channels(), patch.shape()),
            ));
        }
        let mut trace = ImageTrace {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            post: Vec::with_capacity(self.layers.len()),
        };
        let mut x = patch.clone();
        for l in &self.layers {
            let pre = conv2d(&x, &l.weight.tensor, Some(&l.bias.tensor), l.spec)?;
            let post = activation(&pre, Activation::Relu);
            trace.inputs.push(x);
            trace.pre.push(pre);
            x = post.clone();
            trace.post.push(post);
        }
        Ok((x, trace))
    }

    /// Accumulates parameter gradients; returns the gradient w.r.t. the patch.
    pub fn backward(&mut self, trace: ImageTrace, grad_out: &[f64]) -> Result<Vec<f64>> {
        let ImageTrace {
            mut inputs,
            mut pre,
            post,
        } = trace;
        let mut grad = grad_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            activation_backward(&mut pre[i], &post[i], Activation::Relu, &grad)?;
            let g_pre = pre[i].grad().expect("just written").to_vec();
            let l = &mut self.layers[i];
            conv2d_backward(
                &mut inputs[i],
                &mut l.weight.tensor,
                Some(&mut l.bias.tensor),
                l.spec,
                &g_pre,
            )?;
            grad = inputs[i].grad().expect("just written").to_vec();
        }
        Ok(grad)
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

pub fn encode_image(enc: &ImageEncoder, patch: &Tensor) -> Result<Tensor> {
    enc.forward(patch).map(|(f, _)| f)
}

/// Per-location linear map `C -> D` (a bias-free 1×1 convolution).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureReducer {
    pub weight: Parameter,
}

impl FeatureReducer {
    pub fn new(c: usize, d: usize, rng: &mut Rng) -> Self {
        let std = (1.0 / c as f64).sqrt();
        Self {
            weight: Parameter::new("reducer.weight", Tensor::randn(&[d, c, 1, 1], std, rng)),
        }
    }

    pub fn from_matrix(w: Tensor) -> Result<Self> {
        let &[d, c] = w.shape() else {
            return Err(Error::shape("FeatureReducer", format!("{:?}", w.shape())));
        };
        Ok(Self {
            weight: Parameter::new("reducer.weight", w.reshape(&[d, c, 1, 1])?),
        })
    }

    pub fn forward(&self, f_i: &Tensor) -> Result<Tensor> {
        conv2d(f_i, &self.weight.tensor, None, ConvSpec::default())
            .map_err(|e| match e {
                Error::Shape { detail, .. } => Error::shape("reduce_features", detail),
                other => other,
            })
    }

    /// Returns the gradient w.r.t. `f_i`.
    pub fn backward(&mut self, f_i: &Tensor, grad_out: &[f64]) -> Result<Vec<f64>> {
        let mut x = f_i.clone();
        x.clear_grad();
        conv2d_backward(&mut x, &mut self.weight.tensor, None, ConvSpec::default(), grad_out)?;
        Ok(x.grad().expect("just written").to_vec())
    }
}

pub fn reduce_features(r: &FeatureReducer, f_i: &Tensor) -> Result<Tensor> {
    r.forward(f_i)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    /// `[vocab, E]`
    pub embedding: Parameter,
    /// One weight per token position, `[MAX_CAPTION_LEN]`.
    pub position: Parameter,
    /// `[D, E]`
    pub projection: Parameter,
}

#[derive(Debug, Clone)]
pub struct TextTrace {
    tokens: Vec<u32>,
    weight_sum: f64,
    pooled: Tensor,
    projected: Tensor,
    norm: f64,
    output: Tensor,
}

impl TextEncoder {
    pub fn new(vocab: usize, embed_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let mut enc = Self {
            embedding: Parameter::new(
                "text.embedding",
                Tensor::randn(&[vocab, embed_dim], 1.0, rng),
            ),
            position: Parameter::new("text.position", Tensor::zeros(&[MAX_CAPTION_LEN])),
            projection: Parameter::new(
                "text.projection",
                Tensor::randn(&[out_dim, embed_dim], (1.0 / embed_dim as f64).sqrt(), rng),
            ),
        };
        enc.set_position_ramp();
        enc
    }

    /// Linear ramp from 1 at the first token down to 0.5 at the last slot.
    pub fn set_position_ramp(&mut self) {
        let n = self.position.tensor.len();
        for (i, w) in self.position.tensor.data_mut().iter_mut().enumerate() {
            *w = 1.0 - 0.5 * i as f64 / (n - 1).max(1) as f64;
        }
    }

    pub fn set_uniform_positions(&mut self) {
        self.position.tensor.data_mut().fill(1.0);
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.tensor.shape()[0]
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.tensor.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.projection.tensor.shape()[0]
    }

    pub fn forward(&self, tokens: &[u32]) -> Result<(Tensor, TextTrace)> {
        if tokens.is_empty() {
            return Err(Error::Invalid("cannot encode an empty token sequence".into()));
        }
        if tokens.len() > self.position.tensor.len() {
            return Err(Error::Invalid(format!(
                "caption of {} tokens exceeds {} positions",
                tokens.len(),
                self.position.tensor.len()
            )));
        }
        let (v, e) = (self.vocab_size(), self.embed_dim());
        if let Some(t) = tokens.iter().find(|&&t| t as usize >= v) {
            return Err(Error::Invalid(format!("unknown token id {t} (vocabulary {v})")));
        }
        let emb = self.embedding.tensor.data();
        let pos = self.position.tensor.data();
        let weight_sum: f64 = pos[..tokens.len()].iter().sum();
        if weight_sum.abs() < 1e-12 {
            return Err(Error::Invalid("position weights sum to zero".into()));
        }
        let mut pooled = vec![0.0; e];
        for (i, &t) in tokens.iter().enumerate() {
            let row = &emb[t as usize * e..(t as usize + 1) * e];
            for (p, r) in pooled.iter_mut().zip(row) {
                *p += pos[i] * r;
            }
        }
        pooled.iter_mut().for_each(|p| *p /= weight_sum);
        let pooled = Tensor::vector(pooled);
        let projected = linear(&pooled, &self.projection.tensor, None)?;
        let (output, norm) = l2_normalize(&projected)?;
        Ok((
            output.clone(),
            TextTrace {
                tokens: tokens.to_vec(),
                weight_sum,
                pooled,
                projected,
                norm,
                output,
            },
        ))
    }

    pub fn backward(&mut self, trace: TextTrace, grad_out: &[f64]) -> Result<()> {
        let TextTrace {
            tokens,
            weight_sum,
            mut pooled,
            mut projected,
            norm,
            output,
        } = trace;
        l2_normalize_backward(&mut projected, &output, norm, grad_out)?;
        let g_proj = projected.grad().expect("just written").to_vec();
        linear_backward(&mut pooled, &mut self.projection.tensor, None, &g_proj)?;
        let g_u = pooled.grad().expect("just written").to_vec();

        // u = Σ w_i e_i / S  =>  du/de_i = w_i / S,  du/dw_i = (e_i - u) / S
        let e = self.embed_dim();
        let emb = self.embedding.tensor.data().to_vec();
        let pos = self.position.tensor.data().to_vec();
        let u_dot_g: f64 = pooled.data().iter().zip(&g_u).map(|(a, b)| a * b).sum();
        {
            let eg = self.embedding.tensor.grad_mut();
            for (i, &t) in tokens.iter().enumerate() {
                let scale = pos[i] / weight_sum;
                for (dst, g) in eg[t as usize * e..(t as usize + 1) * e].iter_mut().zip(&g_u) {
                    *dst += scale * g;
                }
            }
        }
        let pg = self.position.tensor.grad_mut();
        for (i, &t) in tokens.iter().enumerate() {
            let row = &emb[t as usize * e..(t as usize + 1) * e];
            let e_dot_g: f64 = row.iter().zip(&g_u).map(|(a, b)| a * b).sum();
            pg[i] += (e_dot_g - u_dot_g) / weight_sum;
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![&self.embedding, &self.position, &self.projection]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.embedding, &mut self.position, &mut self.projection]
    }
}

pub fn encode_text(enc: &TextEncoder, tokens: &[u32]) -> Result<Tensor> {
    enc.forward(tokens).map(|(f, _)| f)
}
