//! Global feature modulation, kernel folding and dual-modulated convolution.

use crate::error::{shape_err, Result};
use crate::nn::{conv1x1, ConvKernel, Padding};
use crate::tensor::{Real, Tensor, Var};

/// Per-channel `(alpha, beta)` after the convolution and `gamma` before it.
#[derive(Clone, Debug, PartialEq)]
pub struct ModulationVectors<T = f64> {
    pub alpha: Tensor<T>,
    pub beta: Tensor<T>,
    pub gamma: Tensor<T>,
}

impl<T: Real> ModulationVectors<T> {
    pub fn new(alpha: Tensor<T>, beta: Tensor<T>, gamma: Tensor<T>) -> Result<Self> {
        let n = alpha.len();
        if alpha.rank() != 1 || beta.shape() != [n] || gamma.rank() != 1 {
            return Err(shape_err!(
                "modulation vectors must be 1-D with |alpha| == |beta|, got {:?} {:?} {:?}",
                alpha.shape(),
                beta.shape(),
                gamma.shape()
            ));
        }
        alpha.ensure_finite("alpha")?;
        beta.ensure_finite("beta")?;
        gamma.ensure_finite("gamma")?;
        Ok(Self { alpha, beta, gamma })
    }

    /// `alpha = 1, beta = 0, gamma = 1`.
    pub fn neutral(n: usize, m: usize) -> Result<Self> {
        Self::new(Tensor::full(&[n], 1.0)?, Tensor::zeros(&[n])?, Tensor::full(&[m], 1.0)?)
    }

    fn check(&self, n: usize, m: Option<usize>) -> Result<()> {
        if self.alpha.len() != n {
            return Err(shape_err!("alpha/beta have {} entries, kernel has {n} outputs", self.alpha.len()));
        }
        if let Some(m) = m {
            if self.gamma.len() != m {
                return Err(shape_err!("gamma has {} entries, kernel has {m} inputs", self.gamma.len()));
            }
        }
        Ok(())
    }
}

/// Dense 1x1 weights and bias with the modulation already applied.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldedKernel<T = f64> {
    pub weights: Tensor<T>,
    pub bias_term: Tensor<T>,
}

fn pointwise<T: Real>(k: &ConvKernel<T>) -> Result<Tensor<T>> {
    if k.taps() != (1, 1) {
        return Err(shape_err!("expected a 1x1 kernel, got {:?}", k.taps()));
    }
    k.weight.clone().reshape(&[k.out_channels(), k.in_channels()])
}

/// `alpha * (W x + b) + beta`; gamma is ignored.
pub fn gfm<T: Real>(x: &Tensor<T>, k: &ConvKernel<T>, mv: &ModulationVectors<T>) -> Result<Tensor<T>> {
    mv.check(k.out_channels(), None)?;
    let mut y = conv1x1(x, &pointwise(k)?, &k.bias)?;
    for i in 0..k.out_channels() {
        let (a, b) = (mv.alpha.data()[i], mv.beta.data()[i]);
        y.plane_mut(i).iter_mut().for_each(|v| *v = a * *v + b);
    }
    Ok(y)
}

/// `weights[i][j] = W[i][j] * alpha[i] * gamma[j]`, `bias_term = b * alpha + beta`.
pub fn fold_modulation<T: Real>(k: &ConvKernel<T>, mv: &ModulationVectors<T>) -> Result<FoldedKernel<T>> {
    let w = pointwise(k)?;
    let (n, m) = (k.out_channels(), k.in_channels());
    mv.check(n, Some(m))?;
    let (a, b, g) = (mv.alpha.data(), mv.beta.data(), mv.gamma.data());
    let mut weights = w;
    for (idx, v) in weights.data_mut().iter_mut().enumerate() {
        *v = *v * a[idx / m] * g[idx % m];
    }
    let bias = (0..n).map(|i| k.bias.data()[i] * a[i] + b[i]).collect();
    Ok(FoldedKernel { weights, bias_term: Tensor::from_vec(&[n], bias)? })
}

/// Per-tap fold for kernels larger than 1x1: each tap's `[n, m]` slice is
/// scaled exactly as in [`fold_modulation`].
pub fn fold_modulation_taps<T: Real>(k: &ConvKernel<T>, mv: &ModulationVectors<T>) -> Result<ConvKernel<T>> {
    let (n, m) = (k.out_channels(), k.in_channels());
    mv.check(n, Some(m))?;
    let (kh, kw) = k.taps();
    let taps = kh * kw;
    let (a, b, g) = (mv.alpha.data(), mv.beta.data(), mv.gamma.data());
    let mut weight = k.weight.clone();
    for (idx, v) in weight.data_mut().iter_mut().enumerate() {
        *v = *v * a[idx / (m * taps)] * g[(idx / taps) % m];
    }
    let bias = (0..n).map(|i| k.bias.data()[i] * a[i] + b[i]).collect();
    ConvKernel::new(weight, Tensor::from_vec(&[n], bias)?)
}

/// Dual-modulated 1x1 convolution, evaluated through the folded kernel.
pub fn dmc<T: Real>(x: &Tensor<T>, k: &ConvKernel<T>, mv: &ModulationVectors<T>) -> Result<Tensor<T>> {
    let f = fold_modulation(k, mv)?;
    conv1x1(x, &f.weights, &f.bias_term)
}

/// Multiply counts of modulating an `h x w x n` output feature-wise versus
/// folding into an `n x m` kernel: `(2hwn, nm + 2n)`.
pub fn modulation_cost(h: u64, w: u64, m: u64, n: u64) -> (u64, u64) {
    (2 * h * w * n, n * m + 2 * n)
}

/// Recorded DMC: weight `[n, m, 1, 1]`, bias `[n]`, `alpha`/`beta` `[n]`,
/// `gamma` `[m]`. The fold itself is on the tape so gradients reach the
/// modulation vectors.
pub fn dmc_var<'t, T: Real>(
    x: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Var<'t, T>,
    alpha: Var<'t, T>,
    beta: Var<'t, T>,
    gamma: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let shape = weight.shape();
    let &[n, m, 1, 1] = shape.as_slice() else {
        return Err(shape_err!("DMC weight must be [n, m, 1, 1], got {shape:?}"));
    };
    let w = weight.reshape(&[n, m])?.mul(alpha.reshape(&[n, 1])?)?.mul(gamma.reshape(&[1, m])?)?;
    let b = bias.mul(alpha)?.add(beta)?;
    x.conv2d(w.reshape(&[n, m, 1, 1])?, Some(b), 1, Padding::Valid)
}

#[cfg(test)]
mod tests;
