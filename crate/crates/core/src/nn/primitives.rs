use crate::error::{shape_err, Error, Result};
use crate::tensor::Real;

/// Per-channel standardisation statistics from a forward pass.
pub(crate) struct NormStats<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

pub(crate) fn instance_norm_stats<T: Real>(x: &[T], c: usize, hw: usize, eps: T) -> Result<NormStats<T>> {
    if hw < 2 {
        return Err(Error::Contract("instance norm needs at least 2 spatial elements per channel".into()));
    }
    let n = T::of(hw as f64);
    let mut xhat = vec![T::zero(); c * hw];
    let mut inv_std = Vec::with_capacity(c);
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        let mean = plane.iter().copied().sum::<T>() / n;
        let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let is = T::one() / (var + eps).sqrt();
        for (o, &v) in xhat[ch * hw..(ch + 1) * hw].iter_mut().zip(plane) {
            *o = (v - mean) * is;
        }
        inv_std.push(is);
    }
    Ok(NormStats { xhat, inv_std })
}

/// Gradient w.r.t. the input given the gradient w.r.t. `xhat`.
pub(crate) fn instance_norm_backward<T: Real>(stats: &NormStats<T>, dxhat: &[T], c: usize, hw: usize) -> Vec<T> {
    let n = T::of(hw as f64);
    let mut dx = vec![T::zero(); c * hw];
    for ch in 0..c {
        let r = ch * hw..(ch + 1) * hw;
        let (xh, dxh) = (&stats.xhat[r.clone()], &dxhat[r.clone()]);
        let s1: T = dxh.iter().copied().sum();
        let s2: T = dxh.iter().zip(xh).map(|(&a, &b)| a * b).sum();
        let k = stats.inv_std[ch] / n;
        for ((o, &d), &xv) in dx[r].iter_mut().zip(dxh).zip(xh) {
            *o = k * (n * d - s1 - xv * s2);
        }
    }
    dx
}

pub(crate) fn avg_pool2<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Result<Vec<T>> {
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err!("2x2 pooling needs even spatial dims, got {h}x{w}"));
    }
    let (oh, ow) = (h / 2, w / 2);
    let q = T::of(0.25);
    let mut out = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        let src = &x[ch * h * w..];
        for y in 0..oh {
            for xx in 0..ow {
                let i = 2 * y * w + 2 * xx;
                out[(ch * oh + y) * ow + xx] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * q;
            }
        }
    }
    Ok(out)
}

pub(crate) fn avg_pool2_backward<T: Real>(g: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let q = T::of(0.25);
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                dx[(ch * h + y) * w + xx] = g[(ch * oh + y / 2) * ow + xx / 2] * q;
            }
        }
    }
    dx
}

pub(crate) fn upsample2<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                out[(ch * oh + y) * ow + xx] = x[(ch * h + y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Real>(g: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                dx[(ch * h + y / 2) * w + xx / 2] += g[(ch * oh + y) * ow + xx];
            }
        }
    }
    dx
}
