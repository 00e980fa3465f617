//! Convolutional primitives on `[C, H, W]` tensors.
//!
//! Every function here has a differentiable twin on [`crate::tensor::Var`];
//! both share the kernels in the submodules.

pub(crate) mod conv;
pub(crate) mod deform;
pub(crate) mod primitives;

pub use conv::Padding;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

/// LeakyReLU slope used throughout the network.
pub const LEAKY_SLOPE: f64 = 0.1;

/// Convolution weights `[out, in, kh, kw]` with bias `[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel<T = f64> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> ConvKernel<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let &[n, _, kh, kw] = weight.shape() else {
            return Err(shape_err!("kernel weight must be [out, in, kh, kw], got {:?}", weight.shape()));
        };
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(shape_err!("kernel taps must be odd, got {kh}x{kw}"));
        }
        if bias.shape() != [n] {
            return Err(shape_err!("bias {:?} does not match {n} output channels", bias.shape()));
        }
        weight.ensure_finite("kernel weight")?;
        bias.ensure_finite("kernel bias")?;
        Ok(Self { weight, bias })
    }

    /// Uniform init in `±1/sqrt(fan_in)`, zero bias.
    pub fn random(out_ch: usize, in_ch: usize, k: usize, seed: u64) -> Result<Self> {
        let bound = 1.0 / ((in_ch * k * k) as f64).sqrt();
        Self::new(Tensor::uniform(&[out_ch, in_ch, k, k], -bound, bound, seed)?, Tensor::zeros(&[out_ch])?)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn taps(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }
}

/// Per-site sampling offsets `[2 * kh * kw, H, W]`, in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetField<T = f64>(Tensor<T>);

impl<T: Real> OffsetField<T> {
    pub fn new(offsets: Tensor<T>) -> Result<Self> {
        let (c, _, _) = offsets.chw()?;
        if c % 2 != 0 {
            return Err(shape_err!("offset field needs an even channel count, got {c}"));
        }
        offsets.ensure_finite("offset field")?;
        Ok(Self(offsets))
    }

    /// Constant `(dy, dx)` for every tap and site.
    pub fn uniform_shift(taps: usize, h: usize, w: usize, dy: f64, dx: f64) -> Result<Self> {
        let mut t = Tensor::zeros(&[2 * taps, h, w])?;
        for tap in 0..taps {
            t.plane_mut(2 * tap).fill(T::of(dy));
            t.plane_mut(2 * tap + 1).fill(T::of(dx));
        }
        Self::new(t)
    }

    pub fn taps(&self) -> usize {
        self.0.shape()[0] / 2
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }
}

fn conv_single<T: Real>(x: &[T], c: usize, h: usize, w: usize, k: &ConvKernel<T>, stride: usize, padding: Padding) -> Result<(Vec<T>, usize, usize)> {
    if k.in_channels() != c {
        return Err(shape_err!("kernel expects {} input channels, input has {c}", k.in_channels()));
    }
    let (kh, kw) = k.taps();
    let g = conv::ConvGeom::new(c, h, w, kh, kw, stride, padding)?;
    let (out, _) = conv::forward(&g, x, k.weight.data(), Some(k.bias.data()), k.out_channels());
    Ok((out, g.oh, g.ow))
}

/// 2-D convolution of `[C, H, W]` or `[N, C, H, W]` input with zero padding.
pub fn conv2d<T: Real>(x: &Tensor<T>, k: &ConvKernel<T>, stride: usize, padding: Padding) -> Result<Tensor<T>> {
    match *x.shape() {
        [c, h, w] => {
            let (out, oh, ow) = conv_single(x.data(), c, h, w, k, stride, padding)?;
            Tensor::from_vec(&[k.out_channels(), oh, ow], out)
        }
        [n, c, h, w] => {
            let mut data = Vec::new();
            let (mut oh, mut ow) = (0, 0);
            for img in x.data().chunks(c * h * w).take(n) {
                let (out, a, b) = conv_single(img, c, h, w, k, stride, padding)?;
                (oh, ow) = (a, b);
                data.extend(out);
            }
            Tensor::from_vec(&[n, k.out_channels(), oh, ow], data)
        }
        _ => Err(shape_err!("conv2d input must be [C,H,W] or [N,C,H,W], got {:?}", x.shape())),
    }
}

/// Pointwise convolution with a dense `[n, m]` weight; identical to
/// [`conv2d`] with a 1x1 kernel.
pub fn conv1x1<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, h, w) = x.chw()?;
    let &[n, wm] = weight.shape() else {
        return Err(shape_err!("1x1 weight must be [n, m], got {:?}", weight.shape()));
    };
    if wm != m || bias.shape() != [n] {
        return Err(shape_err!("weight {:?} / bias {:?} do not fit {m} input channels", weight.shape(), bias.shape()));
    }
    let out = conv::matmul_bias(weight.data(), x.data(), Some(bias.data()), n, m, h * w);
    Tensor::from_vec(&[n, h, w], out)
}

/// Bilinear interpolation of every channel at `(py, px)`; neighbours outside
/// the image contribute zero.
pub fn bilinear_sample<T: Real>(x: &Tensor<T>, py: T, px: T) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    let fp = deform::Footprint::new(py, px, h, w);
    let data = (0..c).map(|ch| fp.sample(x.plane(ch))).collect();
    Tensor::from_vec(&[c], data)
}

/// Deformable convolution: tap `n` at site `p0` reads `x(p0 + p_n + offset_n(p0))`.
/// Stride 1, same-size output, offsets shared across input channels.
pub fn deform_conv2d<T: Real>(x: &Tensor<T>, k: &ConvKernel<T>, offsets: &OffsetField<T>) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    let (kh, kw) = k.taps();
    let g = deform_geom(c, h, w, kh, kw, k.in_channels(), offsets.tensor().shape())?;
    let cols = deform::sample_cols(&g, x.data(), offsets.tensor().data());
    let out = conv::matmul_bias(k.weight.data(), &cols, Some(k.bias.data()), k.out_channels(), g.c * g.taps(), h * w);
    Tensor::from_vec(&[k.out_channels(), h, w], out)
}

pub(crate) fn deform_geom(c: usize, h: usize, w: usize, kh: usize, kw: usize, kin: usize, off_shape: &[usize]) -> Result<deform::DeformGeom> {
    if kin != c {
        return Err(shape_err!("kernel expects {kin} input channels, input has {c}"));
    }
    if off_shape != [2 * kh * kw, h, w] {
        return Err(shape_err!("offsets {off_shape:?} do not match {}x{kw} taps over {h}x{w}", kh));
    }
    Ok(deform::DeformGeom { c, h, w, kh, kw })
}

pub fn leaky_relu<T: Real>(x: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::of(slope);
    x.map(|v| if v >= T::zero() { v } else { v * s })
}

/// Per-channel spatial standardisation without affine parameters.
pub fn instance_norm<T: Real>(x: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    let stats = primitives::instance_norm_stats(x.data(), c, h * w, T::of(eps))?;
    Tensor::from_vec(x.shape(), stats.xhat)
}

/// Standardisation followed by per-channel `gamma * xhat + beta`.
pub fn instance_norm_affine<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let (c, _, _) = x.chw()?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_err!("affine params must be [{c}]"));
    }
    let mut y = instance_norm(x, eps)?;
    for ch in 0..c {
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        y.plane_mut(ch).iter_mut().for_each(|v| *v = *v * g + b);
    }
    Ok(y)
}

pub fn avg_pool2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    Tensor::from_vec(&[c, h / 2, w / 2], primitives::avg_pool2(x.data(), c, h, w)?)
}

/// Two same-padded convolutions around a LeakyReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualParams<T = f64> {
    pub conv1: ConvKernel<T>,
    pub conv2: ConvKernel<T>,
}

/// `x + conv2(leaky_relu(conv1(x)))`.
pub fn residual_block<T: Real>(x: &Tensor<T>, p: &ResidualParams<T>) -> Result<Tensor<T>> {
    let hidden = leaky_relu(&conv2d(x, &p.conv1, 1, Padding::Same)?, LEAKY_SLOPE);
    let branch = conv2d(&hidden, &p.conv2, 1, Padding::Same)?;
    if branch.shape() != x.shape() {
        return Err(Error::Shape(format!("residual branch {:?} vs input {:?}", branch.shape(), x.shape())));
    }
    x.zip_map(&branch, |a, b| a + b)
}
