//! Single-level orthonormal 2-D Haar transform and wavelet channel attention.

use crate::color::Frame;
use crate::error::{shape_err, Result};
use crate::metrics::{psnr_from_mse, PSNR_CAP_DB};
use crate::nn::{ConvKernel, Padding};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Subbands of one Haar level. `lh` holds vertical detail (top minus bottom
/// rows of each 2x2 block), `hl` horizontal detail, `hh` the diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletCoeffs<T = f64> {
    pub ll: Tensor<T>,
    pub lh: Tensor<T>,
    pub hl: Tensor<T>,
    pub hh: Tensor<T>,
}

impl<T: Real> WaveletCoeffs<T> {
    /// Stacks the subbands as `[4C, h, w]` in `(ll, lh, hl, hh)` order.
    pub fn to_stack(&self) -> Result<Tensor<T>> {
        Tensor::concat(&[&self.ll, &self.lh, &self.hl, &self.hh])
    }

    pub fn from_stack(stack: &Tensor<T>) -> Result<Self> {
        let (c4, _, _) = stack.chw()?;
        if c4 % 4 != 0 {
            return Err(shape_err!("subband stack needs 4k channels, got {c4}"));
        }
        let c = c4 / 4;
        Ok(Self { ll: stack.narrow(0, c)?, lh: stack.narrow(c, c)?, hl: stack.narrow(2 * c, c)?, hh: stack.narrow(3 * c, c)? })
    }
}

/// `[C, H, W]` planes to a `[4C, H/2, W/2]` subband stack.
pub(crate) fn haar_analysis<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Result<Vec<T>> {
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err!("Haar transform needs even spatial dims, got {h}x{w}"));
    }
    let (h2, w2) = (h / 2, w / 2);
    let band = c * h2 * w2;
    let half = T::of(0.5);
    let mut out = vec![T::zero(); 4 * band];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for y in 0..h2 {
            for xx in 0..w2 {
                let i = 2 * y * w + 2 * xx;
                let (a, b, cc, d) = (plane[i], plane[i + 1], plane[i + w], plane[i + w + 1]);
                let o = (ch * h2 + y) * w2 + xx;
                out[o] = (a + b + cc + d) * half;
                out[band + o] = (a + b - cc - d) * half;
                out[2 * band + o] = (a - b + cc - d) * half;
                out[3 * band + o] = (a - b - cc + d) * half;
            }
        }
    }
    Ok(out)
}

/// `[4C, h, w]` subband stack back to `[C, 2h, 2w]` planes.
pub(crate) fn haar_synthesis<T: Real>(s: &[T], c: usize, h2: usize, w2: usize) -> Vec<T> {
    let (h, w) = (2 * h2, 2 * w2);
    let band = c * h2 * w2;
    let half = T::of(0.5);
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h2 {
            for xx in 0..w2 {
                let o = (ch * h2 + y) * w2 + xx;
                let (ll, lh, hl, hh) = (s[o], s[band + o], s[2 * band + o], s[3 * band + o]);
                let i = ch * h * w + 2 * y * w + 2 * xx;
                out[i] = (ll + lh + hl + hh) * half;
                out[i + 1] = (ll + lh - hl - hh) * half;
                out[i + w] = (ll - lh + hl - hh) * half;
                out[i + w + 1] = (ll - lh - hl + hh) * half;
            }
        }
    }
    out
}

pub fn dwt2_haar<T: Real>(x: &Tensor<T>) -> Result<WaveletCoeffs<T>> {
    let (c, h, w) = x.chw()?;
    let stack = Tensor::from_vec(&[4 * c, h / 2, w / 2], haar_analysis(x.data(), c, h, w)?)?;
    WaveletCoeffs::from_stack(&stack)
}

pub fn idwt2_haar<T: Real>(coeffs: &WaveletCoeffs<T>) -> Result<Tensor<T>> {
    let shape = coeffs.ll.shape();
    if [&coeffs.lh, &coeffs.hl, &coeffs.hh].iter().any(|b| b.shape() != shape) {
        return Err(shape_err!(
            "subband shapes differ: {:?} {:?} {:?} {:?}",
            shape,
            coeffs.lh.shape(),
            coeffs.hl.shape(),
            coeffs.hh.shape()
        ));
    }
    let (c, h2, w2) = coeffs.ll.chw()?;
    let stack = coeffs.to_stack()?;
    Tensor::from_vec(&[c, 2 * h2, 2 * w2], haar_synthesis(stack.data(), c, h2, w2))
}

/// The three pointwise convolutions of the attention block: subband
/// reduction `4C -> Cz`, the channel gate `Cz -> Cz` on pooled features, and
/// the expansion back to `4C` subbands.
#[derive(Clone, Debug, PartialEq)]
pub struct WAParams<T = f64> {
    pub reduce: ConvKernel<T>,
    pub gate: ConvKernel<T>,
    pub expand: ConvKernel<T>,
}

impl<T: Real> WAParams<T> {
    pub fn random(channels: usize, reduced: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            reduce: ConvKernel::random(reduced, 4 * channels, 1, seed)?,
            gate: ConvKernel::random(reduced, reduced, 1, seed.wrapping_add(1))?,
            expand: ConvKernel::random(4 * channels, reduced, 1, seed.wrapping_add(2))?,
        })
    }

    pub fn zeros(channels: usize, reduced: usize) -> Result<Self> {
        let k = |o: usize, i: usize| ConvKernel::new(Tensor::zeros(&[o, i, 1, 1])?, Tensor::zeros(&[o])?);
        Ok(Self { reduce: k(reduced, 4 * channels)?, gate: k(reduced, reduced)?, expand: k(4 * channels, reduced)? })
    }
}

/// Tape handles for the six attention tensors.
#[derive(Clone, Copy, Debug)]
pub struct WAVars<'t, T: Real> {
    pub reduce_w: Var<'t, T>,
    pub reduce_b: Var<'t, T>,
    pub gate_w: Var<'t, T>,
    pub gate_b: Var<'t, T>,
    pub expand_w: Var<'t, T>,
    pub expand_b: Var<'t, T>,
}

impl<'t, T: Real> WAVars<'t, T> {
    pub fn constants(tape: &'t Tape<T>, p: &WAParams<T>) -> Self {
        Self {
            reduce_w: tape.constant(p.reduce.weight.clone()),
            reduce_b: tape.constant(p.reduce.bias.clone()),
            gate_w: tape.constant(p.gate.weight.clone()),
            gate_b: tape.constant(p.gate.bias.clone()),
            expand_w: tape.constant(p.expand.weight.clone()),
            expand_b: tape.constant(p.expand.bias.clone()),
        }
    }
}

/// Recorded wavelet attention:
/// `coeffs = DWT(x)`, `z = conv(coeffs)`, `s = sigmoid(conv(gap(z)))`,
/// `z_o = conv(z * s)`, `out = IDWT(z_o + coeffs)`.
pub fn wavelet_attention_var<'t, T: Real>(x: Var<'t, T>, p: &WAVars<'t, T>) -> Result<Var<'t, T>> {
    let coeffs = x.dwt2()?;
    let z = coeffs.conv2d(p.reduce_w, Some(p.reduce_b), 1, Padding::Valid)?;
    let s = z.global_avg_pool()?.conv2d(p.gate_w, Some(p.gate_b), 1, Padding::Valid)?.sigmoid()?;
    let z_o = z.mul(s)?.conv2d(p.expand_w, Some(p.expand_b), 1, Padding::Valid)?;
    z_o.add(coeffs)?.idwt2()
}

pub fn wavelet_attention<T: Real>(x: &Tensor<T>, p: &WAParams<T>) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let vars = WAVars::constants(&tape, p);
    let out = wavelet_attention_var(tape.constant(x.clone()), &vars)?;
    let v = out.value();
    Ok((*v).clone())
}

/// PSNR (peak 1.0) over the concatenated `lh`, `hl` and `hh` subbands.
/// Identical detail bands report [`PSNR_CAP_DB`].
pub fn hf_psnr(pred: &Frame, reference: &Frame) -> Result<f64> {
    if pred.pixels.shape() != reference.pixels.shape() {
        return Err(shape_err!("HF-PSNR of {:?} vs {:?}", pred.pixels.shape(), reference.pixels.shape()));
    }
    let a = dwt2_haar(&pred.pixels)?;
    let b = dwt2_haar(&reference.pixels)?;
    let mut se = 0.0;
    let mut n = 0usize;
    for (x, y) in [(&a.lh, &b.lh), (&a.hl, &b.hl), (&a.hh, &b.hh)] {
        se += x.data().iter().zip(y.data()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
        n += x.len();
    }
    Ok(psnr_from_mse(se / n as f64, 1.0).min(PSNR_CAP_DB))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_block_subbands() {
        let x = Tensor::<f64>::from_f64(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let c = dwt2_haar(&x).unwrap();
        assert_eq!(c.ll.data(), &[5.0]);
        assert_eq!(c.lh.data(), &[-2.0]);
        assert_eq!(c.hl.data(), &[-1.0]);
        assert_eq!(c.hh.data(), &[0.0]);
        assert_eq!(idwt2_haar(&c).unwrap(), x);
    }

    #[test]
    fn constant_image_has_no_detail() {
        let x = Tensor::<f64>::full(&[2, 4, 6], 0.3).unwrap();
        let c = dwt2_haar(&x).unwrap();
        assert!(c.ll.data().iter().all(|&v| (v - 0.6).abs() < 1e-15));
        for b in [&c.lh, &c.hl, &c.hh] {
            assert!(b.data().iter().all(|&v| v == 0.0));
        }
        let back = idwt2_haar(&c).unwrap();
        assert!(back.max_abs_diff(&x).unwrap() < 1e-15);
    }

    #[test]
    fn odd_dims_and_mismatched_bands_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 3, 4]).unwrap();
        assert!(matches!(dwt2_haar(&x), Err(crate::Error::Shape(_))));
        let mut c = dwt2_haar(&Tensor::<f64>::zeros(&[1, 4, 4]).unwrap()).unwrap();
        c.hh = Tensor::zeros(&[1, 2, 1]).unwrap();
        assert!(matches!(idwt2_haar(&c), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn round_trip_random() {
        let x = Tensor::<f64>::uniform(&[2, 6, 8], -1.0, 1.0, 3).unwrap();
        let back = idwt2_haar(&dwt2_haar(&x).unwrap()).unwrap();
        assert!(back.max_abs_diff(&x).unwrap() <= 1e-12);
    }

    #[test]
    fn zero_branch_attention_is_identity() {
        let x = Tensor::<f64>::uniform(&[3, 4, 6], -1.0, 1.0, 5).unwrap();
        let out = wavelet_attention(&x, &WAParams::zeros(3, 3).unwrap()).unwrap();
        assert!(out.max_abs_diff(&x).unwrap() <= 1e-12);
    }

    #[test]
    fn closed_gate_with_zero_expand_bias_is_identity() {
        let x = Tensor::<f64>::uniform(&[2, 4, 4], -1.0, 1.0, 6).unwrap();
        let mut p = WAParams::random(2, 2, 9).unwrap();
        p.gate.weight = Tensor::zeros(p.gate.weight.shape()).unwrap();
        p.gate.bias = Tensor::full(&[2], -1e3).unwrap();
        let out = wavelet_attention(&x, &p).unwrap();
        assert!(out.max_abs_diff(&x).unwrap() <= 1e-12);
    }

    #[test]
    fn random_attention_is_finite_and_shape_preserving() {
        let x = Tensor::<f64>::uniform(&[2, 4, 4], -1.0, 1.0, 7).unwrap();
        let out = wavelet_attention(&x, &WAParams::random(2, 2, 1).unwrap()).unwrap();
        assert_eq!(out.shape(), x.shape());
        assert!(out.is_finite());
    }
}
