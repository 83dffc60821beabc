use crate::autodiff::{
    activation, activation_backward, linear, linear_backward, pool, Activation, Parameter, Pool,
    Tensor,
};
use crate::error::{Error, Result};
use crate::rng::{stream, Rng, Stream};

/// Two bias-free fully connected layers, relu between, sigmoid out.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub w1: Parameter,
    pub w2: Parameter,
}

#[derive(Debug, Clone)]
pub struct GateTrace {
    input: Tensor,
    hidden_pre: Tensor,
    hidden: Tensor,
    logits: Tensor,
    output: Tensor,
}

impl GateTrace {
    pub fn output(&self) -> &Tensor {
        &self.output
    }

    pub fn min_abs_preactivation(&self) -> f64 {
        self.hidden_pre
            .data()
            .iter()
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

impl Gate {
    fn new(prefix: &str, width: usize, ratio: usize, rng: &mut Rng) -> Result<Self> {
        if ratio == 0 || width % ratio != 0 {
            return Err(Error::Invalid(format!(
                "{prefix}: reduction ratio {ratio} does not divide {width}"
            )));
        }
        let hidden = width / ratio;
        Ok(Self {
            w1: Parameter::new(
                format!("{prefix}.w1"),
                Tensor::randn(&[hidden, width], (2.0 / width as f64).sqrt(), rng),
            ),
            w2: Parameter::new(
                format!("{prefix}.w2"),
                Tensor::randn(&[width, hidden], (1.0 / hidden as f64).sqrt(), rng),
            ),
        })
    }

    pub fn width(&self) -> usize {
        self.w1.tensor.shape()[1]
    }

    fn forward(&self, op: &'static str, x: &Tensor) -> Result<GateTrace> {
        if x.len() != self.width() {
            return Err(Error::shape(
                op,
                format!("expected {} inputs, got {}", self.width(), x.len()),
            ));
        }
        let input = Tensor::vector(x.data().to_vec());
        let hidden_pre = linear(&input, &self.w1.tensor, None)?;
        let hidden = activation(&hidden_pre, Activation::Relu);
        let logits = linear(&hidden, &self.w2.tensor, None)?;
        let output = activation(&logits, Activation::Sigmoid);
        Ok(GateTrace {
            input,
            hidden_pre,
            hidden,
            logits,
            output,
        })
    }

    fn backward(&mut self, trace: GateTrace, grad_out: &[f64]) -> Result<Vec<f64>> {
        let GateTrace {
            mut input,
            mut hidden_pre,
            mut hidden,
            mut logits,
            output,
        } = trace;
        activation_backward(&mut logits, &output, Activation::Sigmoid, grad_out)?;
        let g = logits.grad().expect("just written").to_vec();
        linear_backward(&mut hidden, &mut self.w2.tensor, None, &g)?;
        let g = hidden.grad().expect("just written").to_vec();
        let post = activation(&hidden_pre, Activation::Relu);
        activation_backward(&mut hidden_pre, &post, Activation::Relu, &g)?;
        let g = hidden_pre.grad().expect("just written").to_vec();
        linear_backward(&mut input, &mut self.w1.tensor, None, &g)?;
        Ok(input.grad().expect("just written").to_vec())
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![&self.w1, &self.w2]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.w1, &mut self.w2]
    }

    fn zero_weights(&mut self) {
        self.w1.tensor.data_mut().fill(0.0);
        self.w2.tensor.data_mut().fill(0.0);
    }
}

/// Produces a per-channel gate `A_c` in (0,1)^D from the spatially pooled map.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAttention {
    pub gate: Gate,
}

impl ChannelAttention {
    pub fn new(d: usize, ratio: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            gate: Gate::new("attn.channel", d, ratio, rng)?,
        })
    }

    pub fn zeroed(d: usize, ratio: usize) -> Result<Self> {
        let mut ca = Self::new(d, ratio, &mut stream(0, Stream::Init))?;
        ca.gate.zero_weights();
        Ok(ca)
    }

    pub fn forward(&self, f_c: &Tensor) -> Result<GateTrace> {
        self.gate.forward("channel_attention", f_c)
    }

    pub fn backward(&mut self, trace: GateTrace, grad_out: &[f64]) -> Result<Vec<f64>> {
        self.gate.backward(trace, grad_out)
    }
}

pub fn channel_attention(ca: &ChannelAttention, f_c: &Tensor) -> Result<Tensor> {
    Ok(ca.forward(f_c)?.output)
}

/// Produces the `H×W` map `A` from the channel-averaged, flattened `F̂_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialAttention {
    pub gate: Gate,
    pub height: usize,
    pub width: usize,
}

impl SpatialAttention {
    pub fn new(height: usize, width: usize, ratio: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            gate: Gate::new("attn.spatial", height * width, ratio, rng)?,
            height,
            width,
        })
    }

    pub fn zeroed(height: usize, width: usize, ratio: usize) -> Result<Self> {
        let mut sa = Self::new(height, width, ratio, &mut stream(0, Stream::Init))?;
        sa.gate.zero_weights();
        Ok(sa)
    }

    /// `f_s` is the `[H, W]` channel mean; the returned map has shape `[H, W]`.
    pub fn forward(&self, f_s: &Tensor) -> Result<(Tensor, GateTrace)> {
        if f_s.shape() != [self.height, self.width] {
            return Err(Error::shape(
                "spatial_attention",
                format!("expected {}x{} map, got {:?}", self.height, self.width, f_s.shape()),
            ));
        }
        let trace = self.gate.forward("spatial_attention", f_s)?;
        let map = trace.output.clone().reshape(&[self.height, self.width])?;
        Ok((map, trace))
    }

    pub fn backward(&mut self, trace: GateTrace, grad_out: &[f64]) -> Result<Vec<f64>> {
        self.gate.backward(trace, grad_out)
    }
}

pub fn spatial_attention(sa: &SpatialAttention, f_hat: &Tensor) -> Result<Tensor> {
    let f_s = pool(f_hat, Pool::ChannelMean)?;
    Ok(sa.forward(&f_s)?.0)
}

/// `F̂_c[d,h,w] = A_c[d] · F_c[d,h,w]`
pub fn apply_channel_attention(a_c: &Tensor, f_c: &Tensor) -> Result<Tensor> {
    let d = check_channels("apply_channel_attention", a_c, f_c)?;
    let hw = f_c.len() / d;
    let mut out = f_c.clone();
    out.clear_grad();
    for (ci, chunk) in out.data_mut().chunks_mut(hw).enumerate() {
        chunk.iter_mut().for_each(|v| *v *= a_c.data()[ci]);
    }
    Ok(out)
}

/// Returns `(∂/∂A_c, ∂/∂F_c)`.
pub fn apply_channel_attention_backward(
    a_c: &Tensor,
    f_c: &Tensor,
    grad_out: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = check_channels("apply_channel_attention", a_c, f_c)?;
    if grad_out.len() != f_c.len() {
        return Err(Error::shape("apply_channel_attention", "upstream gradient length"));
    }
    let hw = f_c.len() / d;
    let mut g_a = vec![0.0; d];
    let mut g_f = vec![0.0; f_c.len()];
    for ci in 0..d {
        let a = a_c.data()[ci];
        for j in ci * hw..(ci + 1) * hw {
            g_a[ci] += grad_out[j] * f_c.data()[j];
            g_f[j] = grad_out[j] * a;
        }
    }
    Ok((g_a, g_f))
}

fn check_channels(op: &'static str, a_c: &Tensor, f_c: &Tensor) -> Result<usize> {
    let d = a_c.len();
    if f_c.shape().len() != 3 || f_c.shape()[0] != d {
        return Err(Error::shape(
            op,
            format!("{d} channel weights against map {:?}", f_c.shape()),
        ));
    }
    Ok(d)
}
