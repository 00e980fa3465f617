use crate::error::{shape_err, Result};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `k / 2`; preserves the spatial size at stride 1.
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_y: usize,
    pub pad_x: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(c: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, padding: Padding) -> Result<Self> {
        if stride == 0 {
            return Err(shape_err!("stride must be positive"));
        }
        let (pad_y, pad_x) = match padding {
            Padding::Same => {
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(shape_err!("same padding needs odd kernel, got {kh}x{kw}"));
                }
                (kh / 2, kw / 2)
            }
            Padding::Valid => (0, 0),
        };
        if h + 2 * pad_y < kh || w + 2 * pad_x < kw {
            return Err(shape_err!("{kh}x{kw} kernel larger than padded {h}x{w} input"));
        }
        let oh = (h + 2 * pad_y - kh) / stride + 1;
        let ow = (w + 2 * pad_x - kw) / stride + 1;
        Ok(Self { c, h, w, kh, kw, stride, pad_y, pad_x, oh, ow })
    }

    pub fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn p(&self) -> usize {
        self.oh * self.ow
    }

    /// 1x1, stride 1: the input already is the column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }

    /// Output columns `ox` whose input column `ox * stride + kj - pad_x` is in range.
    #[inline]
    fn valid_ox(&self, kj: usize) -> (usize, usize) {
        let lo = if self.pad_x > kj { (self.pad_x - kj).div_ceil(self.stride) } else { 0 };
        let lo = lo.min(self.ow);
        // ox * s + kj - pad < w  <=>  ox * s < w + pad - kj
        let lim = (self.w + self.pad_x).saturating_sub(kj);
        let hi = lim.div_ceil(self.stride).min(self.ow);
        (lo, hi.max(lo))
    }
}

pub(crate) fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let p = g.p();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * p;
                let (lo, hi) = g.valid_ox(kj);
                for oy in 0..g.oh {
                    let dst = &mut cols[row + oy * g.ow..row + (oy + 1) * g.ow];
                    let iy = (oy * g.stride + ki) as isize - g.pad_y as isize;
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    if hi == lo {
                        continue;
                    }
                    if g.stride == 1 {
                        let start = lo + kj - g.pad_x;
                        dst[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        for ox in lo..hi {
                            dst[ox] = src[ox * g.stride + kj - g.pad_x];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn col2im<T: Real>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let p = g.p();
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * p;
                let (lo, hi) = g.valid_ox(kj);
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad_y as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * g.ow..row + (oy + 1) * g.ow];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in lo..hi {
                        dst[ox * g.stride + kj - g.pad_x] += src[ox];
                    }
                }
            }
        }
    }
}

/// Single-image convolution. Returns the output `[n, oh, ow]` and, unless the
/// kernel is pointwise, the column matrix for reuse in the backward pass.
pub(crate) fn forward<T: Real>(g: &ConvGeom, x: &[T], weight: &[T], bias: Option<&[T]>, n: usize) -> (Vec<T>, Option<Vec<T>>) {
    let (k, p) = (g.k(), g.p());
    let cols = if g.is_pointwise() {
        None
    } else {
        let mut cols = vec![T::zero(); k * p];
        im2col(g, x, &mut cols);
        Some(cols)
    };
    let out = matmul_bias(weight, cols.as_deref().unwrap_or(x), bias, n, k, p);
    (out, cols)
}

/// `weight[n, k] * cols[k, p] + bias[n]`.
pub(crate) fn matmul_bias<T: Real>(weight: &[T], cols: &[T], bias: Option<&[T]>, n: usize, k: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * p];
    if let Some(b) = bias {
        for (row, &bv) in out.chunks_mut(p).zip(b) {
            row.fill(bv);
        }
    }
    let beta = if bias.is_some() { T::one() } else { T::zero() };
    T::gemm(n, k, p, T::one(), weight, false, cols, false, beta, &mut out);
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

/// Gradients of [`forward`]. `cols` must be what `forward` returned.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    cols: Option<&[T]>,
    gout: &[T],
    n: usize,
    need: [bool; 3],
) -> ConvGrads<T> {
    let (k, p) = (g.k(), g.p());
    let cols = cols.unwrap_or(x);
    let dw = need[1].then(|| {
        let mut dw = vec![T::zero(); n * k];
        T::gemm(n, p, k, T::one(), gout, false, cols, true, T::zero(), &mut dw);
        dw
    });
    let db = need[2].then(|| gout.chunks(p).map(|r| r.iter().copied().sum()).collect());
    let dx = need[0].then(|| {
        let mut dcols = vec![T::zero(); k * p];
        T::gemm(k, n, p, T::one(), weight, true, gout, false, T::zero(), &mut dcols);
        if g.is_pointwise() {
            dcols
        } else {
            let mut dx = vec![T::zero(); g.c * g.h * g.w];
            col2im(g, &dcols, &mut dx);
            dx
        }
    });
    ConvGrads { dx, dw, db }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_arithmetic() {
        let g = ConvGeom::new(1, 4, 4, 3, 3, 2, Padding::Same).unwrap();
        assert_eq!((g.oh, g.ow), (2, 2));
        let g = ConvGeom::new(1, 5, 5, 3, 3, 1, Padding::Valid).unwrap();
        assert_eq!((g.oh, g.ow), (3, 3));
        assert!(ConvGeom::new(1, 5, 5, 2, 2, 1, Padding::Same).is_err());
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)> for every geometry
        for &(h, w, k, s, pad) in &[(5, 6, 3, 1, Padding::Same), (6, 7, 3, 2, Padding::Same), (5, 5, 3, 2, Padding::Valid), (7, 4, 1, 2, Padding::Valid)] {
            let g = ConvGeom::new(2, h, w, k, k, s, pad).unwrap();
            let x: Vec<f64> = (0..2 * h * w).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
            let c: Vec<f64> = (0..g.k() * g.p()).map(|i| ((i * 17 % 7) as f64) - 3.0).collect();
            let mut cols = vec![0.0; g.k() * g.p()];
            im2col(&g, &x, &mut cols);
            let mut back = vec![0.0; x.len()];
            col2im(&g, &c, &mut back);
            let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            assert_eq!(lhs, rhs);
        }
    }
}
