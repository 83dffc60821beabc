use serde::{Deserialize, Serialize};

use super::attention::{
    apply_channel_attention, apply_channel_attention_backward, ChannelAttention, GateTrace,
    SpatialAttention,
};
use super::prototype::{attend_pool, attend_pool_backward, guidance_loss, target_map, PoolTrace};
use super::PrototypeTable;
use crate::autodiff::{pool, pool_backward, Parameter, Pool, Tensor};
use crate::encoders::{FeatureReducer, ImageEncoder, ImageTrace, TextEncoder, TextTrace};
use crate::error::{Error, Result};
use crate::objectives::SharedClassifier;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Attention modules present, no guidance.
    Baseline,
    /// Guidance from the identity's prototype.
    Tpan,
    /// Guidance from the sample's own caption.
    Tian,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Baseline, Mode::Tpan, Mode::Tian];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Tpan => "tpan",
            Mode::Tian => "tian",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Input channels followed by each conv layer's output channels.
    pub conv_channels: Vec<usize>,
    pub embed_dim: usize,
    /// Shared embedding dimension `D`.
    pub dim: usize,
    pub channel_ratio: usize,
    pub spatial_ratio: usize,
    pub crop_height: usize,
    pub crop_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            conv_channels: vec![3, 16, 32, 32],
            embed_dim: 16,
            dim: 16,
            channel_ratio: 4,
            spatial_ratio: 3,
            crop_height: 48,
            crop_width: 16,
        }
    }
}

impl ModelConfig {
    /// Spatial size of `F_i` after the stride-2 stack.
    pub fn feature_size(&self) -> (usize, usize) {
        let layers = self.conv_channels.len().saturating_sub(1);
        let shrink = |mut n: usize| {
            for _ in 0..layers {
                n = n.div_ceil(2);
            }
            n
        };
        (shrink(self.crop_height), shrink(self.crop_width))
    }
}

/// All trainable pieces: image path, attention, text path and classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct TpsModel {
    pub config: ModelConfig,
    pub image: ImageEncoder,
    pub reducer: FeatureReducer,
    pub channel: ChannelAttention,
    pub spatial: SpatialAttention,
    pub text: TextEncoder,
    pub classifier: SharedClassifier,
}

/// Intermediate values of one image forward pass.
#[derive(Debug, Clone)]
pub struct ImageForward {
    pub embedding: Tensor,
    /// Learned attention `A`, `[H, W]`.
    pub attention: Tensor,
    /// Reduced map `F_c`, `[D, H, W]`.
    pub reduced: Tensor,
    encoder: ImageTrace,
    features: Tensor,
    channel: GateTrace,
    attended: Tensor,
    spatial: GateTrace,
    pooled: PoolTrace,
}

impl ImageForward {
    /// Smallest distance of any relu input in the image path to its kink.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.encoder
            .min_abs_preactivation()
            .min(self.channel.min_abs_preactivation())
            .min(self.spatial.min_abs_preactivation())
    }
}

/// Where the guidance target of one sample comes from.
#[derive(Debug, Clone, Copy)]
pub enum GuideSource<'a> {
    None,
    /// Prototype row `identity`; `fallback` is used while the row is uninitialised.
    Prototype {
        table: &'a PrototypeTable,
        identity: usize,
        fallback: &'a [f64],
    },
    Instance(&'a [f64]),
}

impl<'a> GuideSource<'a> {
    pub fn for_mode(
        mode: Mode,
        table: Option<&'a PrototypeTable>,
        identity: usize,
        instance: &'a [f64],
    ) -> Result<Self> {
        Ok(match mode {
            Mode::Baseline => GuideSource::None,
            Mode::Tian => GuideSource::Instance(instance),
            Mode::Tpan => GuideSource::Prototype {
                table: table.ok_or_else(|| Error::Invalid("tpan mode needs a prototype table".into()))?,
                identity,
                fallback: instance,
            },
        })
    }

    /// The guiding vector, and whether a prototype fallback happened.
    pub fn vector(&self) -> Result<Option<(&'a [f64], bool)>> {
        Ok(match *self {
            GuideSource::None => None,
            GuideSource::Instance(v) => Some((v, false)),
            GuideSource::Prototype {
                table,
                identity,
                fallback,
            } => {
                if identity >= table.len() {
                    return Err(Error::IdentityOutOfRange {
                        index: identity,
                        len: table.len(),
                    });
                }
                match table.row(identity) {
                    Some(row) => Some((row, false)),
                    None => Some((fallback, true)),
                }
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct TpanOutput {
    pub forward: ImageForward,
    pub target: Option<Tensor>,
    pub guide: f64,
    /// `∂guide/∂A`; zeros when there is no target.
    pub guide_grad: Vec<f64>,
    pub fell_back: bool,
}

impl TpsModel {
    pub fn new(config: ModelConfig, vocab: usize, num_identities: usize, rng: &mut Rng) -> Result<Self> {
        let c = *config.conv_channels.last().ok_or_else(|| {
            Error::Config("conv_channels needs at least one layer".into())
        })?;
        if config.conv_channels.len() < 2 || config.conv_channels[0] != 3 {
            return Err(Error::Config(
                "conv_channels must start at 3 and list at least one layer".into(),
            ));
        }
        let (h, w) = config.feature_size();
        let image = ImageEncoder::new(&config.conv_channels, rng);
        let reducer = FeatureReducer::new(c, config.dim, rng);
        let channel = ChannelAttention::new(config.dim, config.channel_ratio, rng)?;
        let spatial = SpatialAttention::new(h, w, config.spatial_ratio, rng)?;
        let text = TextEncoder::new(vocab, config.embed_dim, config.dim, rng);
        let classifier = SharedClassifier::new(num_identities, config.dim, rng);
        Ok(Self {
            config,
            image,
            reducer,
            channel,
            spatial,
            text,
            classifier,
        })
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut v = self.image.params();
        v.push(&self.reducer.weight);
        v.extend(self.channel.gate.params());
        v.extend(self.spatial.gate.params());
        v.extend(self.text.params());
        v.push(&self.classifier.weight);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.image.params_mut();
        v.push(&mut self.reducer.weight);
        v.extend(self.channel.gate.params_mut());
        v.extend(self.spatial.gate.params_mut());
        v.extend(self.text.params_mut());
        v.push(&mut self.classifier.weight);
        v
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.tensor.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|p| p.tensor.data().iter().copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.num_params() {
            return Err(Error::shape(
                "set_flat_params",
                format!("{} values for {} parameters", theta.len(), self.num_params()),
            ));
        }
        let mut off = 0;
        for p in self.params_mut() {
            let n = p.tensor.len();
            p.tensor.data_mut().copy_from_slice(&theta[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Gradients in [`Self::flat_params`] order, zero where none were written.
    pub fn flat_grads(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|p| match p.tensor.grad() {
                Some(g) => g.to_vec(),
                None => vec![0.0; p.tensor.len()],
            })
            .collect()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.tensor.clear_grad();
        }
    }

    pub fn forward_image(&self, patch: &Tensor) -> Result<ImageForward> {
        let (features, encoder) = self.image.forward(patch)?;
        let reduced = self.reducer.forward(&features)?;
        let f_c = pool(&reduced, Pool::SpatialMean)?;
        let channel = self.channel.forward(&f_c)?;
        let attended = apply_channel_attention(channel.output(), &reduced)?;
        let f_s = pool(&attended, Pool::ChannelMean)?;
        let (attention, spatial) = self.spatial.forward(&f_s)?;
        let (embedding, pooled) = attend_pool(&attended, &attention)?;
        Ok(ImageForward {
            embedding,
            attention,
            reduced,
            encoder,
            features,
            channel,
            attended,
            spatial,
            pooled,
        })
    }

    pub fn embed_image(&self, patch: &Tensor) -> Result<Tensor> {
        Ok(self.forward_image(patch)?.embedding)
    }

    /// Accumulates parameter gradients from `∂/∂e_i` and an extra `∂/∂A`.
    pub fn backward_image(&mut self, fwd: ImageForward, g_e: &[f64], g_a: &[f64]) -> Result<()> {
        let ImageForward {
            attention,
            mut reduced,
            encoder,
            features,
            channel,
            mut attended,
            spatial,
            pooled,
            ..
        } = fwd;
        let (mut g_hat, mut g_att) = attend_pool_backward(&attended, &attention, &pooled, g_e)?;
        if g_a.len() != g_att.len() {
            return Err(Error::shape("backward_image", "attention gradient length"));
        }
        g_att.iter_mut().zip(g_a).for_each(|(a, b)| *a += b);

        let g_fs = self.spatial.backward(spatial, &g_att)?;
        attended.clear_grad();
        pool_backward(&mut attended, Pool::ChannelMean, &g_fs)?;
        g_hat
            .iter_mut()
            .zip(attended.grad().expect("just written"))
            .for_each(|(a, b)| *a += b);

        let a_c = channel.output().clone();
        let (g_ac, mut g_fc) = apply_channel_attention_backward(&a_c, &reduced, &g_hat)?;
        let g_pool = self.channel.backward(channel, &g_ac)?;
        reduced.clear_grad();
        pool_backward(&mut reduced, Pool::SpatialMean, &g_pool)?;
        g_fc.iter_mut()
            .zip(reduced.grad().expect("just written"))
            .for_each(|(a, b)| *a += b);

        let g_fi = self.reducer.backward(&features, &g_fc)?;
        self.image.backward(encoder, &g_fi)?;
        Ok(())
    }

    pub fn forward_text(&self, tokens: &[u32]) -> Result<(Tensor, TextTrace)> {
        self.text.forward(tokens)
    }

    pub fn embed_text(&self, tokens: &[u32]) -> Result<Tensor> {
        Ok(self.text.forward(tokens)?.0)
    }

    pub fn backward_text(&mut self, trace: TextTrace, g: &[f64]) -> Result<()> {
        self.text.backward(trace, g)
    }
}

/// Image forward plus the guidance term for one sample.
///
/// The target map is built from detached values; `guide_grad` only reaches `A`.
pub fn tpan_forward(model: &TpsModel, patch: &Tensor, guide: GuideSource<'_>) -> Result<TpanOutput> {
    let forward = model.forward_image(patch)?;
    let hw = forward.attention.len();
    let Some((vector, fell_back)) = guide.vector()? else {
        return Ok(TpanOutput {
            forward,
            target: None,
            guide: 0.0,
            guide_grad: vec![0.0; hw],
            fell_back: false,
        });
    };
    let target = target_map(vector, &forward.reduced)?;
    let (guide, guide_grad) = guidance_loss(&target, &forward.attention)?;
    Ok(TpanOutput {
        forward,
        target: Some(target),
        guide,
        guide_grad,
        fell_back,
    })
}

/// Same as [`tpan_forward`] with a target map fixed in advance.
pub fn tpan_forward_with_target(
    model: &TpsModel,
    patch: &Tensor,
    target: Option<&Tensor>,
) -> Result<TpanOutput> {
    let forward = model.forward_image(patch)?;
    let (guide, guide_grad) = match target {
        Some(t) => guidance_loss(t, &forward.attention)?,
        None => (0.0, vec![0.0; forward.attention.len()]),
    };
    Ok(TpanOutput {
        forward,
        target: target.cloned(),
        guide,
        guide_grad,
        fell_back: false,
    })
}
