use crate::error::{Error, Result};

use super::Tensor;

fn check_grad_len(op: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::shape(
            op,
            format!("upstream gradient has {got} values, output has {expected}"),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------- linear

/// `y = W x (+ b)` with `W: [n_out, n_in]`. `x` may have any shape holding
/// `n_in` values.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let (n_out, n_in) = linear_dims(x, w, b)?;
    let xd = x.data();
    let wd = w.data();
    let mut y = vec![0.0; n_out];
    for (o, yo) in y.iter_mut().enumerate() {
        let row = &wd[o * n_in..(o + 1) * n_in];
        *yo = row.iter().zip(xd).map(|(a, b)| a * b).sum::<f64>();
    }
    if let Some(b) = b {
        for (yo, bo) in y.iter_mut().zip(b.data()) {
            *yo += bo;
        }
    }
    Ok(Tensor::vector(y))
}

fn linear_dims(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<(usize, usize)> {
    let &[n_out, n_in] = w.shape() else {
        return Err(Error::shape("linear", format!("weight shape {:?}", w.shape())));
    };
    if x.len() != n_in {
        return Err(Error::shape(
            "linear",
            format!("input has {} values, weight expects {n_in}", x.len()),
        ));
    }
    if let Some(b) = b {
        if b.len() != n_out {
            return Err(Error::shape(
                "linear",
                format!("bias has {} values, expected {n_out}", b.len()),
            ));
        }
    }
    Ok((n_out, n_in))
}

pub fn linear_backward(
    x: &mut Tensor,
    w: &mut Tensor,
    b: Option<&mut Tensor>,
    grad_out: &[f64],
) -> Result<()> {
    let (n_out, n_in) = linear_dims(x, w, b.as_deref())?;
    check_grad_len("linear", n_out, grad_out.len())?;
    {
        let xd = x.data().to_vec();
        let wg = w.grad_mut();
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (wgi, xi) in wg[o * n_in..(o + 1) * n_in].iter_mut().zip(&xd) {
                *wgi += g * xi;
            }
        }
    }
    {
        let wd = w.data().to_vec();
        let xg = x.grad_mut();
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (xgi, wi) in xg.iter_mut().zip(&wd[o * n_in..(o + 1) * n_in]) {
                *xgi += g * wi;
            }
        }
    }
    if let Some(b) = b {
        for (bg, g) in b.grad_mut().iter_mut().zip(grad_out) {
            *bg += g;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- conv2d

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PadMode {
    #[default]
    Zeros,
    /// Border pixels are repeated, so a constant input stays constant.
    Replicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
    pub mode: PadMode,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            pad: 0,
            mode: PadMode::Zeros,
        }
    }
}

struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn conv_geom(x: &Tensor, k: &Tensor, b: Option<&Tensor>, spec: ConvSpec) -> Result<ConvGeom> {
    let &[c_in, h, w] = x.shape() else {
        return Err(Error::shape("conv2d", format!("input shape {:?}", x.shape())));
    };
    let &[c_out, kc, kh, kw] = k.shape() else {
        return Err(Error::shape("conv2d", format!("kernel shape {:?}", k.shape())));
    };
    if kc != c_in {
        return Err(Error::shape(
            "conv2d",
            format!("kernel expects {kc} input channels, input has {c_in}"),
        ));
    }
    if spec.stride == 0 {
        return Err(Error::Invalid("conv2d stride must be positive".into()));
    }
    if kh > h + 2 * spec.pad || kw > w + 2 * spec.pad {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {kh}x{kw} exceeds padded extent of {h}x{w} (pad {})", spec.pad),
        ));
    }
    if let Some(b) = b {
        if b.len() != c_out {
            return Err(Error::shape(
                "conv2d",
                format!("bias has {} values, expected {c_out}", b.len()),
            ));
        }
    }
    let oh = (h + 2 * spec.pad - kh) / spec.stride + 1;
    let ow = (w + 2 * spec.pad - kw) / spec.stride + 1;
    Ok(ConvGeom {
        c_in,
        h,
        w,
        c_out,
        kh,
        kw,
        oh,
        ow,
    })
}

/// Resolves a padded coordinate to a source index, or `None` for a zero pad.
#[inline]
fn source_index(pos: isize, extent: usize, mode: PadMode) -> Option<usize> {
    if pos >= 0 && (pos as usize) < extent {
        return Some(pos as usize);
    }
    match mode {
        PadMode::Zeros => None,
        PadMode::Replicate => Some(pos.clamp(0, extent as isize - 1) as usize),
    }
}

/// 2-D cross-correlation of `x: [C_in, H, W]` with `k: [C_out, C_in, kh, kw]`.
pub fn conv2d(x: &Tensor, k: &Tensor, b: Option<&Tensor>, spec: ConvSpec) -> Result<Tensor> {
    let g = conv_geom(x, k, b, spec)?;
    let xd = x.data();
    let kd = k.data();
    let mut out = vec![0.0; g.c_out * g.oh * g.ow];
    for co in 0..g.c_out {
        let bias = b.map_or(0.0, |b| b.data()[co]);
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let mut acc = bias;
                for ci in 0..g.c_in {
                    for ky in 0..g.kh {
                        let py = (oy * spec.stride + ky) as isize - spec.pad as isize;
                        let Some(iy) = source_index(py, g.h, spec.mode) else {
                            continue;
                        };
                        for kx in 0..g.kw {
                            let px = (ox * spec.stride + kx) as isize - spec.pad as isize;
                            let Some(ix) = source_index(px, g.w, spec.mode) else {
                                continue;
                            };
                            acc += kd[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx]
                                * xd[(ci * g.h + iy) * g.w + ix];
                        }
                    }
                }
                out[(co * g.oh + oy) * g.ow + ox] = acc;
            }
        }
    }
    Tensor::new(vec![g.c_out, g.oh, g.ow], out)
}

pub fn conv2d_backward(
    x: &mut Tensor,
    k: &mut Tensor,
    b: Option<&mut Tensor>,
    spec: ConvSpec,
    grad_out: &[f64],
) -> Result<()> {
    let g = conv_geom(x, k, b.as_deref(), spec)?;
    check_grad_len("conv2d", g.c_out * g.oh * g.ow, grad_out.len())?;
    let xd = x.data().to_vec();
    let kd = k.data().to_vec();
    let mut xg = vec![0.0; xd.len()];
    let mut kg = vec![0.0; kd.len()];
    let mut bg = vec![0.0; g.c_out];
    for co in 0..g.c_out {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let go = grad_out[(co * g.oh + oy) * g.ow + ox];
                if go == 0.0 {
                    continue;
                }
                bg[co] += go;
                for ci in 0..g.c_in {
                    for ky in 0..g.kh {
                        let py = (oy * spec.stride + ky) as isize - spec.pad as isize;
                        let Some(iy) = source_index(py, g.h, spec.mode) else {
                            continue;
                        };
                        for kx in 0..g.kw {
                            let px = (ox * spec.stride + kx) as isize - spec.pad as isize;
                            let Some(ix) = source_index(px, g.w, spec.mode) else {
                                continue;
                            };
                            let ki = ((co * g.c_in + ci) * g.kh + ky) * g.kw + kx;
                            let xi = (ci * g.h + iy) * g.w + ix;
                            kg[ki] += go * xd[xi];
                            xg[xi] += go * kd[ki];
                        }
                    }
                }
            }
        }
    }
    add_into(x.grad_mut(), &xg);
    add_into(k.grad_mut(), &kg);
    if let Some(b) = b {
        add_into(b.grad_mut(), &bg);
    }
    Ok(())
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

// ---------------------------------------------------------------- activations

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// Logistic function, evaluated on the branch that cannot overflow.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    let mut y = Tensor::zeros(x.shape());
    for (yi, &xi) in y.data_mut().iter_mut().zip(x.data()) {
        *yi = match kind {
            Activation::Relu => xi.max(0.0),
            Activation::Sigmoid => sigmoid(xi),
        };
    }
    y
}

/// `y` is the forward output; relu's subgradient at 0 is 0.
pub fn activation_backward(
    x: &mut Tensor,
    y: &Tensor,
    kind: Activation,
    grad_out: &[f64],
) -> Result<()> {
    check_grad_len("activation", y.len(), grad_out.len())?;
    if x.len() != y.len() {
        return Err(Error::shape("activation", "input/output length differ"));
    }
    let xd = x.data().to_vec();
    let xg = x.grad_mut();
    for i in 0..xg.len() {
        xg[i] += match kind {
            Activation::Relu => {
                if xd[i] > 0.0 {
                    grad_out[i]
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = y.data()[i];
                grad_out[i] * s * (1.0 - s)
            }
        };
    }
    Ok(())
}

// ---------------------------------------------------------------- pooling

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pool {
    /// `[C, H, W] -> [C]`
    SpatialMean,
    /// `[C, H, W] -> [H, W]`
    ChannelMean,
}

fn chw(op: &'static str, x: &Tensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::shape(op, format!("expected [C, H, W], got {:?}", x.shape()))),
    }
}

pub fn pool(x: &Tensor, kind: Pool) -> Result<Tensor> {
    let (c, h, w) = chw("pool", x)?;
    let hw = h * w;
    let xd = x.data();
    match kind {
        Pool::SpatialMean => {
            let out = (0..c)
                .map(|ci| xd[ci * hw..(ci + 1) * hw].iter().sum::<f64>() / hw as f64)
                .collect();
            Ok(Tensor::vector(out))
        }
        Pool::ChannelMean => {
            let mut out = vec![0.0; hw];
            for ci in 0..c {
                add_into(&mut out, &xd[ci * hw..(ci + 1) * hw]);
            }
            out.iter_mut().for_each(|v| *v /= c as f64);
            Tensor::new(vec![h, w], out)
        }
    }
}

pub fn pool_backward(x: &mut Tensor, kind: Pool, grad_out: &[f64]) -> Result<()> {
    let (c, h, w) = chw("pool", x)?;
    let hw = h * w;
    let xg = x.grad_mut();
    match kind {
        Pool::SpatialMean => {
            check_grad_len("pool", c, grad_out.len())?;
            for ci in 0..c {
                let g = grad_out[ci] / hw as f64;
                xg[ci * hw..(ci + 1) * hw].iter_mut().for_each(|v| *v += g);
            }
        }
        Pool::ChannelMean => {
            check_grad_len("pool", hw, grad_out.len())?;
            for ci in 0..c {
                for (v, g) in xg[ci * hw..(ci + 1) * hw].iter_mut().zip(grad_out) {
                    *v += g / c as f64;
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- normalisation

/// Returns `x / ||x||` and the norm. Fails below a norm of 1e-12.
pub fn l2_normalize(x: &Tensor) -> Result<(Tensor, f64)> {
    let n = x.norm();
    if !n.is_finite() {
        return Err(Error::NonFinite("l2_normalize".into()));
    }
    if n < 1e-12 {
        return Err(Error::Invalid("cannot normalise a zero vector".into()));
    }
    let mut y = Tensor::zeros(x.shape());
    for (yi, xi) in y.data_mut().iter_mut().zip(x.data()) {
        *yi = xi / n;
    }
    Ok((y, n))
}

pub fn l2_normalize_backward(x: &mut Tensor, y: &Tensor, norm: f64, grad_out: &[f64]) -> Result<()> {
    check_grad_len("l2_normalize", y.len(), grad_out.len())?;
    let proj: f64 = y.data().iter().zip(grad_out).map(|(a, b)| a * b).sum();
    let yd = y.data().to_vec();
    for ((xg, yi), g) in x.grad_mut().iter_mut().zip(&yd).zip(grad_out) {
        *xg += (g - yi * proj) / norm;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::rng::{stream, Stream};
    use rand::Rng;

    fn randn(shape: &[usize], seed: u64) -> Tensor {
        Tensor::randn(shape, 1.0, &mut stream(seed, Stream::Check))
    }

    /// Random linear read-out turning a tensor op into a scalar objective.
    fn readout(n: usize, seed: u64) -> Vec<f64> {
        randn(&[n], seed ^ 0xabc).into_data()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn linear_identity_and_zero_input() {
        let x = Tensor::vector(vec![1.0, -2.0, 3.0]);
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let zero_b = Tensor::zeros(&[3]);
        assert_eq!(linear(&x, &eye, Some(&zero_b)).unwrap().data(), x.data());

        let w = randn(&[2, 3], 1);
        let b = Tensor::vector(vec![0.25, -4.0]);
        let y = linear(&Tensor::zeros(&[3]), &w, Some(&b)).unwrap();
        assert_eq!(y.data(), b.data());
    }

    #[test]
    fn linear_rejects_shape_mismatch() {
        let w = Tensor::zeros(&[2, 3]);
        assert!(linear(&Tensor::zeros(&[4]), &w, None).is_err());
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let (n_out, n_in) = (3, 4);
        let x0 = randn(&[n_in], 2);
        let w0 = randn(&[n_out, n_in], 3);
        let b0 = randn(&[n_out], 4);
        let c = readout(n_out, 5);
        let theta: Vec<f64> = [x0.data(), w0.data(), b0.data()].concat();
        let split = |t: &[f64]| {
            (
                Tensor::new(vec![n_in], t[..n_in].to_vec()).unwrap(),
                Tensor::new(vec![n_out, n_in], t[n_in..n_in + n_out * n_in].to_vec()).unwrap(),
                Tensor::new(vec![n_out], t[n_in + n_out * n_in..].to_vec()).unwrap(),
            )
        };
        let report = grad_check(&theta, 1e-5, |t| {
            let (mut x, mut w, mut b) = split(t);
            let y = linear(&x, &w, Some(&b)).unwrap();
            linear_backward(&mut x, &mut w, Some(&mut b), &c).unwrap();
            let g = [x.grad().unwrap(), w.grad().unwrap(), b.grad().unwrap()].concat();
            (dot(y.data(), &c), g)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn backward_accumulates() {
        let mut x = randn(&[4], 6);
        let mut w = randn(&[2, 4], 7);
        let g = [1.0, -0.5];
        linear_backward(&mut x, &mut w, None, &g).unwrap();
        let once = w.grad().unwrap().to_vec();
        linear_backward(&mut x, &mut w, None, &g).unwrap();
        for (a, b) in w.grad().unwrap().iter().zip(&once) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn conv_delta_kernel_sums_channels() {
        let x = randn(&[3, 5, 4], 8);
        let k = Tensor::full(&[1, 3, 1, 1], 1.0);
        let y = conv2d(&x, &k, None, ConvSpec::default()).unwrap();
        assert_eq!(y.shape(), &[1, 5, 4]);
        for i in 0..20 {
            let s = x.data()[i] + x.data()[20 + i] + x.data()[40 + i];
            assert!((y.data()[i] - s).abs() < 1e-15);
        }
    }

    #[test]
    fn conv_zero_kernel_and_output_size() {
        let x = randn(&[2, 7, 6], 9);
        let k = Tensor::zeros(&[4, 2, 3, 3]);
        let spec = ConvSpec {
            stride: 2,
            pad: 1,
            mode: PadMode::Zeros,
        };
        let y = conv2d(&x, &k, None, spec).unwrap();
        // floor((7 + 2 - 3) / 2) + 1 = 4, floor((6 + 2 - 3) / 2) + 1 = 3
        assert_eq!(y.shape(), &[4, 4, 3]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_rejects_oversized_kernel_and_channel_mismatch() {
        let x = Tensor::zeros(&[2, 2, 2]);
        assert!(conv2d(&x, &Tensor::zeros(&[1, 2, 3, 3]), None, ConvSpec::default()).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[1, 3, 1, 1]), None, ConvSpec::default()).is_err());
    }

    #[test]
    fn replicate_padding_keeps_constant_input_constant() {
        let x = Tensor::full(&[2, 6, 5], 0.7);
        let k = randn(&[3, 2, 3, 3], 10);
        let spec = ConvSpec {
            stride: 2,
            pad: 1,
            mode: PadMode::Replicate,
        };
        let y = conv2d(&x, &k, None, spec).unwrap();
        let hw = y.shape()[1] * y.shape()[2];
        for co in 0..3 {
            let first = y.data()[co * hw];
            for v in &y.data()[co * hw..(co + 1) * hw] {
                assert!((v - first).abs() < 1e-14);
            }
        }
    }

    fn conv_grad_check(mode: PadMode, stride: usize) -> f64 {
        let (cin, h, w, cout, k) = (2, 5, 5, 3, 3);
        let spec = ConvSpec {
            stride,
            pad: 1,
            mode,
        };
        let nx = cin * h * w;
        let nk = cout * cin * k * k;
        let x0 = randn(&[nx], 11);
        let k0 = randn(&[nk], 12);
        let b0 = randn(&[cout], 13);
        let out_len = conv2d(
            &x0.clone().reshape(&[cin, h, w]).unwrap(),
            &k0.clone().reshape(&[cout, cin, k, k]).unwrap(),
            None,
            spec,
        )
        .unwrap()
        .len();
        let c = readout(out_len, 14);
        let theta: Vec<f64> = [x0.data(), k0.data(), b0.data()].concat();
        grad_check(&theta, 1e-5, |t| {
            let mut x = Tensor::new(vec![cin, h, w], t[..nx].to_vec()).unwrap();
            let mut kk = Tensor::new(vec![cout, cin, k, k], t[nx..nx + nk].to_vec()).unwrap();
            let mut b = Tensor::new(vec![cout], t[nx + nk..].to_vec()).unwrap();
            let y = conv2d(&x, &kk, Some(&b), spec).unwrap();
            conv2d_backward(&mut x, &mut kk, Some(&mut b), spec, &c).unwrap();
            let g = [x.grad().unwrap(), kk.grad().unwrap(), b.grad().unwrap()].concat();
            (dot(y.data(), &c), g)
        })
        .unwrap()
        .max_rel_error
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        assert!(conv_grad_check(PadMode::Zeros, 1) < 1e-6);
        assert!(conv_grad_check(PadMode::Zeros, 2) < 1e-6);
        assert!(conv_grad_check(PadMode::Replicate, 2) < 1e-6);
    }

    #[test]
    fn activation_values() {
        let x = Tensor::vector(vec![-1.0, 2.0, 0.0]);
        assert_eq!(activation(&x, Activation::Relu).data(), &[0.0, 2.0, 0.0]);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-1000.0).is_finite() && sigmoid(1000.0) == 1.0);
        let mut x = x;
        let y = activation(&x, Activation::Relu);
        activation_backward(&mut x, &y, Activation::Relu, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(x.grad().unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn sigmoid_backward_matches_finite_differences() {
        let x0 = randn(&[16], 15);
        let c = readout(16, 16);
        let r = grad_check(x0.data(), 1e-5, |t| {
            let mut x = Tensor::vector(t.to_vec());
            let y = activation(&x, Activation::Sigmoid);
            activation_backward(&mut x, &y, Activation::Sigmoid, &c).unwrap();
            (dot(y.data(), &c), x.grad().unwrap().to_vec())
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn relu_backward_away_from_kink() {
        let mut rng = stream(17, Stream::Check);
        // resample evaluation points away from 0
        let x0: Vec<f64> = (0..16)
            .map(|_| {
                let v: f64 = rng.random_range(0.1..1.0);
                if rng.random_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect();
        let c = readout(16, 18);
        let r = grad_check(&x0, 1e-5, |t| {
            let mut x = Tensor::vector(t.to_vec());
            let y = activation(&x, Activation::Relu);
            activation_backward(&mut x, &y, Activation::Relu, &c).unwrap();
            (dot(y.data(), &c), x.grad().unwrap().to_vec())
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn pool_values() {
        let x = Tensor::full(&[3, 2, 4], 1.5);
        assert!(pool(&x, Pool::SpatialMean).unwrap().data().iter().all(|&v| v == 1.5));
        let cm = pool(&x, Pool::ChannelMean).unwrap();
        assert_eq!(cm.shape(), &[2, 4]);
        assert!(cm.data().iter().all(|&v| v == 1.5));
        let one = Tensor::new(vec![1, 1, 1], vec![-0.3]).unwrap();
        assert_eq!(pool(&one, Pool::SpatialMean).unwrap().data(), &[-0.3]);
        assert_eq!(pool(&one, Pool::ChannelMean).unwrap().data(), &[-0.3]);
    }

    #[test]
    fn pool_backward_matches_finite_differences() {
        for kind in [Pool::SpatialMean, Pool::ChannelMean] {
            let x0 = randn(&[4 * 3 * 2], 19);
            let n_out = if kind == Pool::SpatialMean { 4 } else { 6 };
            let c = readout(n_out, 20);
            let r = grad_check(x0.data(), 1e-5, |t| {
                let mut x = Tensor::new(vec![4, 3, 2], t.to_vec()).unwrap();
                let y = pool(&x, kind).unwrap();
                pool_backward(&mut x, kind, &c).unwrap();
                (dot(y.data(), &c), x.grad().unwrap().to_vec())
            })
            .unwrap();
            assert!(r.max_rel_error < 1e-8, "{kind:?} {r:?}");
        }
    }

    #[test]
    fn normalize_backward_matches_finite_differences() {
        let x0 = randn(&[7], 21);
        let c = readout(7, 22);
        let r = grad_check(x0.data(), 1e-5, |t| {
            let mut x = Tensor::vector(t.to_vec());
            let (y, n) = l2_normalize(&x).unwrap();
            l2_normalize_backward(&mut x, &y, n, &c).unwrap();
            (dot(y.data(), &c), x.grad().unwrap().to_vec())
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
        assert!(l2_normalize(&Tensor::zeros(&[3])).is_err());
    }
}
