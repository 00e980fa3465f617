use std::rc::Rc;

use super::{Real, Tape, Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::nn::{conv, deform, deform_geom, primitives, Padding};
use crate::wavelet::{haar_analysis, haar_synthesis};

/// Trailing-aligned broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let dim = |s: &[usize], i: usize| if i + s.len() >= rank { s[i + s.len() - rank] } else { 1 };
    (0..rank)
        .map(|i| match (dim(a, i), dim(b, i)) {
            (x, y) if x == y => Ok(x),
            (1, y) => Ok(y),
            (x, 1) => Ok(x),
            _ => Err(shape_err!("cannot broadcast {a:?} with {b:?}")),
        })
        .collect()
}

/// For every flat index of `out`, the flat index of the broadcast source.
fn index_map(out: &[usize], src: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for i in (0..src.len()).rev() {
        let oi = i + rank - src.len();
        strides[oi] = if src[i] == 1 { 0 } else { s };
        s *= src[i];
    }
    let n: usize = out.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..n {
        map.push(flat);
        for d in (0..rank).rev() {
            idx[d] += 1;
            flat += strides[d];
            if idx[d] < out[d] {
                break;
            }
            flat -= strides[d] * out[d];
            idx[d] = 0;
        }
    }
    map
}

#[derive(Clone, Copy)]
enum Bin {
    Add,
    Sub,
    Mul,
}

fn reduce_to<T: Real>(g: &[T], map: Option<&[usize]>, shape: &[usize], f: impl Fn(usize, T) -> T) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    let mut out = vec![T::zero(); n];
    match map {
        None => out.iter_mut().zip(g).enumerate().for_each(|(i, (o, &gv))| *o = f(i, gv)),
        Some(map) => g.iter().zip(map).enumerate().for_each(|(i, (&gv, &j))| out[j] += f(i, gv)),
    }
    Tensor::from_vec(shape, out)
}

fn unary<'t, T: Real>(
    x: Var<'t, T>,
    value: Tensor<T>,
    grad: impl Fn(&Tensor<T>, &Tensor<T>) -> Result<Tensor<T>> + 'static,
) -> Result<Var<'t, T>> {
    x.tape().record(value, &[x], Box::new(move |g, p, _| Ok(vec![Some(grad(g, p[0])?)])))
}

impl<'t, T: Real> Var<'t, T> {
    fn check_tape(&self, other: &Var<'t, T>) {
        assert!(std::ptr::eq(self.tape(), other.tape()), "vars from different tapes");
    }

    fn binary(self, other: Self, op: Bin) -> Result<Self> {
        self.check_tape(&other);
        let (a, b) = (self.value(), other.value());
        let shape = broadcast_shape(a.shape(), b.shape())?;
        let (ma, mb) = if a.shape() == b.shape() {
            (None, None)
        } else {
            (Some(Rc::new(index_map(&shape, a.shape()))), Some(Rc::new(index_map(&shape, b.shape()))))
        };
        let n: usize = shape.iter().product();
        let ia = |i: usize| ma.as_ref().map_or(i, |m| m[i]);
        let ib = |i: usize| mb.as_ref().map_or(i, |m| m[i]);
        let f = |x: T, y: T| match op {
            Bin::Add => x + y,
            Bin::Sub => x - y,
            Bin::Mul => x * y,
        };
        let data = (0..n).map(|i| f(a.data()[ia(i)], b.data()[ib(i)])).collect();
        let out = Tensor::from_vec(&shape, data)?;
        self.tape().record(
            out,
            &[self, other],
            Box::new(move |g, p, need| {
                let (a, b) = (p[0], p[1]);
                let ia = |i: usize| ma.as_ref().map_or(i, |m| m[i]);
                let ib = |i: usize| mb.as_ref().map_or(i, |m| m[i]);
                let ga = need[0]
                    .then(|| {
                        reduce_to(g.data(), ma.as_deref().map(|v| v.as_slice()), a.shape(), |i, gv| match op {
                            Bin::Add | Bin::Sub => gv,
                            Bin::Mul => gv * b.data()[ib(i)],
                        })
                    })
                    .transpose()?;
                let gb = need[1]
                    .then(|| {
                        reduce_to(g.data(), mb.as_deref().map(|v| v.as_slice()), b.shape(), |i, gv| match op {
                            Bin::Add => gv,
                            Bin::Sub => -gv,
                            Bin::Mul => gv * a.data()[ia(i)],
                        })
                    })
                    .transpose()?;
                Ok(vec![ga, gb])
            }),
        )
    }

    /// Broadcasting sum.
    pub fn add(self, other: Self) -> Result<Self> {
        self.binary(other, Bin::Add)
    }

    pub fn sub(self, other: Self) -> Result<Self> {
        self.binary(other, Bin::Sub)
    }

    /// Broadcasting element-wise product.
    pub fn mul(self, other: Self) -> Result<Self> {
        self.binary(other, Bin::Mul)
    }

    pub fn scale(self, c: f64) -> Result<Self> {
        let c = T::of(c);
        unary(self, self.value().scaled(c), move |g, _| Ok(g.scaled(c)))
    }

    pub fn add_scalar(self, c: f64) -> Result<Self> {
        let c = T::of(c);
        unary(self, self.value().map(|v| v + c), |g, _| Ok(g.clone()))
    }

    pub fn sum(self) -> Result<Self> {
        let v = self.value();
        unary(self, Tensor::scalar(v.sum()), |g, x| Tensor::from_vec(x.shape(), vec![g.data()[0]; x.len()]))
    }

    pub fn mean(self) -> Result<Self> {
        let n = self.value().len() as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Mean absolute difference; the subgradient at zero difference is zero.
    pub fn l1_loss(self, target: Self) -> Result<Self> {
        self.check_tape(&target);
        let (a, b) = (self.value(), target.value());
        if a.shape() != b.shape() {
            return Err(shape_err!("l1 loss between {:?} and {:?}", a.shape(), b.shape()));
        }
        let n = T::of(a.len() as f64);
        let loss = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).abs()).sum::<T>() / n;
        self.tape().record(
            Tensor::scalar(loss),
            &[self, target],
            Box::new(move |g, p, need| {
                let s = g.data()[0] / n;
                let sign = |d: T| {
                    if d > T::zero() {
                        s
                    } else if d < T::zero() {
                        -s
                    } else {
                        T::zero()
                    }
                };
                let da = p[0].zip_map(p[1], |x, y| sign(x - y))?;
                let db = need[1].then(|| da.scaled(-T::one()));
                Ok(vec![need[0].then_some(da), db])
            }),
        )
    }

    pub fn sigmoid(self) -> Result<Self> {
        let y = self.value().map(|v| T::one() / (T::one() + (-v).exp()));
        let saved = y.clone();
        unary(self, y, move |g, _| g.zip_map(&saved, |gv, s| gv * s * (T::one() - s)))
    }

    /// `x` where `x >= 0`, `slope * x` elsewhere.
    pub fn leaky_relu(self, slope: f64) -> Result<Self> {
        let s = T::of(slope);
        let y = self.value().map(|v| if v >= T::zero() { v } else { v * s });
        unary(self, y, move |g, x| g.zip_map(x, |gv, xv| if xv >= T::zero() { gv } else { gv * s }))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let y = (*self.value()).clone().reshape(shape)?;
        unary(self, y, |g, x| g.clone().reshape(x.shape()))
    }

    /// Rows `start..start + len` of the leading axis.
    pub fn narrow(self, start: usize, len: usize) -> Result<Self> {
        let y = self.value().narrow(start, len)?;
        unary(self, y, move |g, x| {
            let inner: usize = x.shape()[1..].iter().product();
            let mut dx = Tensor::zeros(x.shape())?;
            dx.data_mut()[start * inner..(start + len) * inner].copy_from_slice(g.data());
            Ok(dx)
        })
    }

    /// Concatenation along the leading axis.
    pub fn concat(parts: &[Self]) -> Result<Self> {
        let first = *parts.first().ok_or_else(|| shape_err!("concat of nothing"))?;
        let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor<T>> = values.iter().map(|v| v.as_ref()).collect();
        let y = Tensor::concat(&refs)?;
        first.tape().record(
            y,
            parts,
            Box::new(|g, p, need| {
                let mut off = 0;
                let mut out = Vec::with_capacity(p.len());
                for (x, &nd) in p.iter().zip(need) {
                    let n = x.len();
                    out.push(if nd { Some(Tensor::from_vec(x.shape(), g.data()[off..off + n].to_vec())?) } else { None });
                    off += n;
                }
                Ok(out)
            }),
        )
    }

    /// Convolution of a `[C, H, W]` input with a `[n, C, kh, kw]` weight.
    pub fn conv2d(self, weight: Self, bias: Option<Self>, stride: usize, padding: Padding) -> Result<Self> {
        let x = self.value();
        let w = weight.value();
        let (c, h, wd) = x.chw()?;
        let &[n, kc, kh, kw] = w.shape() else {
            return Err(shape_err!("conv weight must be [out, in, kh, kw], got {:?}", w.shape()));
        };
        if kc != c {
            return Err(shape_err!("conv weight expects {kc} input channels, input has {c}"));
        }
        let b = bias.map(|b| b.value());
        if let Some(b) = &b {
            if b.shape() != [n] {
                return Err(shape_err!("conv bias {:?} for {n} outputs", b.shape()));
            }
        }
        let g = conv::ConvGeom::new(c, h, wd, kh, kw, stride, padding)?;
        let (out, cols) = conv::forward(&g, x.data(), w.data(), b.as_ref().map(|b| b.data()), n);
        let out = Tensor::from_vec(&[n, g.oh, g.ow], out)?;
        let mut parents = vec![self, weight];
        parents.extend(bias);
        self.tape().record(
            out,
            &parents,
            Box::new(move |gout, p, need| {
                let grads = conv::backward(&g, p[0].data(), p[1].data(), cols.as_deref(), gout.data(), n, [need[0], need[1], need.get(2).copied().unwrap_or(false)]);
                let mut res = vec![
                    grads.dx.map(|d| Tensor::from_vec(p[0].shape(), d)).transpose()?,
                    grads.dw.map(|d| Tensor::from_vec(p[1].shape(), d)).transpose()?,
                ];
                if p.len() == 3 {
                    res.push(grads.db.map(|d| Tensor::from_vec(&[n], d)).transpose()?);
                }
                Ok(res)
            }),
        )
    }

    /// Deformable convolution; `offsets` is `[2 * kh * kw, H, W]`.
    pub fn deform_conv2d(self, weight: Self, bias: Option<Self>, offsets: Self) -> Result<Self> {
        let x = self.value();
        let w = weight.value();
        let off = offsets.value();
        let (c, h, wd) = x.chw()?;
        let &[n, kc, kh, kw] = w.shape() else {
            return Err(shape_err!("deform weight must be [out, in, kh, kw], got {:?}", w.shape()));
        };
        let g = deform_geom(c, h, wd, kh, kw, kc, off.shape())?;
        let cols = deform::sample_cols(&g, x.data(), off.data());
        let b = bias.map(|b| b.value());
        let out = conv::matmul_bias(w.data(), &cols, b.as_ref().map(|b| b.data()), n, g.c * g.taps(), g.hw());
        let out = Tensor::from_vec(&[n, h, wd], out)?;
        let has_bias = bias.is_some();
        let mut parents = vec![self, weight, offsets];
        parents.extend(bias);
        self.tape().record(
            out,
            &parents,
            Box::new(move |gout, p, need| {
                let (k, hw) = (g.c * g.taps(), g.hw());
                let dw = need[1]
                    .then(|| {
                        let mut dw = vec![T::zero(); n * k];
                        T::gemm(n, hw, k, T::one(), gout.data(), false, &cols, true, T::zero(), &mut dw);
                        Tensor::from_vec(p[1].shape(), dw)
                    })
                    .transpose()?;
                let (dx, doff) = if need[0] || need[2] {
                    let mut dcols = vec![T::zero(); k * hw];
                    T::gemm(k, n, hw, T::one(), p[1].data(), true, gout.data(), false, T::zero(), &mut dcols);
                    deform::backward_cols(&g, p[0].data(), p[2].data(), &dcols, need[0], need[2])
                } else {
                    (None, None)
                };
                let mut res = vec![
                    dx.map(|d| Tensor::from_vec(p[0].shape(), d)).transpose()?,
                    dw,
                    doff.map(|d| Tensor::from_vec(p[2].shape(), d)).transpose()?,
                ];
                if has_bias {
                    res.push(need[3].then(|| Tensor::from_vec(&[n], gout.data().chunks(hw).map(|r| r.iter().copied().sum()).collect())).transpose()?);
                }
                Ok(res)
            }),
        )
    }

    /// Per-channel spatial standardisation with optional `[C]` affine terms.
    pub fn instance_norm(self, gamma: Option<Self>, beta: Option<Self>, eps: f64) -> Result<Self> {
        let x = self.value();
        let (c, h, w) = x.chw()?;
        let hw = h * w;
        let stats = Rc::new(primitives::instance_norm_stats(x.data(), c, hw, T::of(eps))?);
        let gv = gamma.map(|g| g.value());
        let bv = beta.map(|b| b.value());
        for t in gv.iter().chain(bv.iter()) {
            if t.shape() != [c] {
                return Err(shape_err!("instance norm affine param {:?} for {c} channels", t.shape()));
            }
        }
        let mut y = stats.xhat.clone();
        for ch in 0..c {
            let g = gv.as_ref().map_or(T::one(), |g| g.data()[ch]);
            let b = bv.as_ref().map_or(T::zero(), |b| b.data()[ch]);
            y[ch * hw..(ch + 1) * hw].iter_mut().for_each(|v| *v = *v * g + b);
        }
        let y = Tensor::from_vec(&[c, h, w], y)?;
        let (has_g, has_b) = (gamma.is_some(), beta.is_some());
        let mut parents = vec![self];
        parents.extend(gamma);
        parents.extend(beta);
        self.tape().record(
            y,
            &parents,
            Box::new(move |g, p, need| {
                let gd = g.data();
                let gamma = has_g.then(|| p[1]);
                let mut res = Vec::with_capacity(p.len());
                res.push(if need[0] {
                    let dxhat: Vec<T> = match gamma {
                        Some(gm) => gd.iter().enumerate().map(|(i, &v)| v * gm.data()[i / hw]).collect(),
                        None => gd.to_vec(),
                    };
                    Some(Tensor::from_vec(&[c, h, w], primitives::instance_norm_backward(&stats, &dxhat, c, hw))?)
                } else {
                    None
                });
                let per_channel = |f: &dyn Fn(usize) -> T| -> Result<Tensor<T>> {
                    Tensor::from_vec(&[c], (0..c).map(|ch| (ch * hw..(ch + 1) * hw).map(|i| gd[i] * f(i)).sum()).collect())
                };
                if has_g {
                    res.push(need[1].then(|| per_channel(&|i| stats.xhat[i])).transpose()?);
                }
                if has_b {
                    res.push(need[res.len()].then(|| per_channel(&|_| T::one())).transpose()?);
                }
                Ok(res)
            }),
        )
    }

    pub fn avg_pool2(self) -> Result<Self> {
        let x = self.value();
        let (c, h, w) = x.chw()?;
        let y = Tensor::from_vec(&[c, h / 2, w / 2], primitives::avg_pool2(x.data(), c, h, w)?)?;
        unary(self, y, move |g, _| Tensor::from_vec(&[c, h, w], primitives::avg_pool2_backward(g.data(), c, h, w)))
    }

    /// `[C, H, W] -> [C, 1, 1]` spatial mean.
    pub fn global_avg_pool(self) -> Result<Self> {
        let x = self.value();
        let (c, h, w) = x.chw()?;
        let hw = h * w;
        let inv = T::of(1.0 / hw as f64);
        let y = Tensor::from_vec(&[c, 1, 1], (0..c).map(|ch| x.plane(ch).iter().copied().sum::<T>() * inv).collect())?;
        unary(self, y, move |g, _| {
            Tensor::from_vec(&[c, h, w], (0..c * hw).map(|i| g.data()[i / hw] * inv).collect())
        })
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(self) -> Result<Self> {
        let x = self.value();
        let (c, h, w) = x.chw()?;
        let y = Tensor::from_vec(&[c, 2 * h, 2 * w], primitives::upsample2(x.data(), c, h, w))?;
        unary(self, y, move |g, _| Tensor::from_vec(&[c, h, w], primitives::upsample2_backward(g.data(), c, h, w)))
    }

    /// Single-level Haar analysis, `[C, H, W] -> [4C, H/2, W/2]` in
    /// `(ll, lh, hl, hh)` block order.
    pub fn dwt2(self) -> Result<Self> {
        let x = self.value();
        let (c, h, w) = x.chw()?;
        let y = Tensor::from_vec(&[4 * c, h / 2, w / 2], haar_analysis(x.data(), c, h, w)?)?;
        unary(self, y, move |g, _| Tensor::from_vec(&[c, h, w], haar_synthesis(g.data(), c, h / 2, w / 2)))
    }

    /// Inverse of [`Var::dwt2`].
    pub fn idwt2(self) -> Result<Self> {
        let x = self.value();
        let (c4, h, w) = x.chw()?;
        if c4 % 4 != 0 {
            return Err(shape_err!("subband stack needs 4k channels, got {c4}"));
        }
        let c = c4 / 4;
        let y = Tensor::from_vec(&[c, 2 * h, 2 * w], haar_synthesis(x.data(), c, h, w))?;
        unary(self, y, move |g, _| Tensor::from_vec(&[c4, h, w], haar_analysis(g.data(), c, 2 * h, 2 * w)?))
    }
}

impl<T: Real> Tape<T> {
    /// Shorthand for `a.l1_loss(b)` that checks tape identity up front.
    pub fn l1<'t>(&'t self, a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
        if !std::ptr::eq(a.tape(), self) {
            return Err(Error::Contract("var recorded on another tape".into()));
        }
        a.l1_loss(b)
    }
}
