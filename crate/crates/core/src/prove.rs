//! Runtime property suites behind `didnet prove`.
//!
//! Each suite returns one [`Outcome`]; errors raised while checking count as
//! failures rather than aborting the run.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::color::{self, BitDepth, ColorSpace, Frame, Gamut};
use crate::degradation::{synth_clip_pair, MID, QP_LABELS};
use crate::error::Result;
use crate::metrics;
use crate::modulation::{dmc, fold_modulation, gfm, modulation_cost, ModulationVectors};
use crate::net::{self, NetConfig};
use crate::nn::{conv1x1, conv2d, deform_conv2d, ConvKernel, OffsetField, Padding};
use crate::source::{hdr_clip, SourceOptions};
use crate::tensor::{grad_check, grad_check_at, Tape, Tensor, Var};
use crate::wavelet::{dwt2_haar, idwt2_haar, wavelet_attention, wavelet_attention_var, WAParams, WAVars};

#[derive(Clone, Debug)]
pub struct Outcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

pub type Suite = fn() -> Result<(bool, String)>;

/// Name and body of every property suite, in reporting order.
pub const SUITES: &[(&str, Suite)] = &[
    ("modulation-equivalence", modulation_equivalence),
    ("dmc-fold", dmc_fold),
    ("cost-table", cost_table),
    ("wavelet", wavelet_properties),
    ("deformable", deformable_degeneracy),
    ("gradients", gradient_checks),
    ("color", color_pipeline),
    ("degradation", degradation_monotonicity),
    ("metrics", metric_sanity),
];

pub fn run(name: &'static str, suite: Suite) -> Outcome {
    let t0 = Instant::now();
    let (passed, detail) = suite().unwrap_or_else(|e| (false, format!("error: {e}")));
    Outcome { name, passed, detail, seconds: t0.elapsed().as_secs_f64() }
}

pub fn run_all() -> Vec<Outcome> {
    SUITES.iter().map(|&(n, s)| run(n, s)).collect()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn vec_with_zeros(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Result<Tensor> {
    let data = (0..n).map(|_| if r.gen_bool(0.15) { 0.0 } else { r.gen_range(lo..hi) }).collect();
    Tensor::from_vec(&[n], data)
}

/// GFM after a 1x1 conv equals one conv with `W * alpha`, `b * alpha + beta`.
pub fn modulation_equivalence() -> Result<(bool, String)> {
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for t in 0..1000u64 {
        let (m, n) = (r.gen_range(1..9), r.gen_range(1..9));
        let (h, w) = (r.gen_range(1..6), r.gen_range(1..6));
        let x = Tensor::uniform(&[m, h, w], -3.0, 3.0, t)?;
        let k = ConvKernel::new(Tensor::uniform(&[n, m, 1, 1], -2.0, 2.0, t + 10_000)?, Tensor::uniform(&[n], -1.0, 1.0, t + 20_000)?)?;
        let mv = ModulationVectors::new(vec_with_zeros(&mut r, n, -2.0, 2.0)?, vec_with_zeros(&mut r, n, -1.0, 1.0)?, Tensor::full(&[m], 1.0)?)?;
        let f = fold_modulation(&k, &mv)?;
        let folded = conv1x1(&x, &f.weights, &f.bias_term)?;
        worst = worst.max(gfm(&x, &k, &mv)?.max_abs_diff(&folded)?);
    }
    Ok((worst <= 1e-10, format!("max |gfm - folded| = {worst:.3e} over 1000 trials (tol 1e-10)")))
}

/// Folded DMC against the unfolded path: scale input by gamma, convolve,
/// then modulate by alpha and beta.
pub fn dmc_fold() -> Result<(bool, String)> {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for t in 0..1000u64 {
        let (m, n) = (r.gen_range(1..9), r.gen_range(1..9));
        let (h, w) = (r.gen_range(1..6), r.gen_range(1..6));
        let x = Tensor::uniform(&[m, h, w], -3.0, 3.0, t)?;
        let k = ConvKernel::new(Tensor::uniform(&[n, m, 1, 1], -2.0, 2.0, t + 10_000)?, Tensor::uniform(&[n], -1.0, 1.0, t + 20_000)?)?;
        let mv = ModulationVectors::new(
            vec_with_zeros(&mut r, n, -2.0, 2.0)?,
            vec_with_zeros(&mut r, n, -1.0, 1.0)?,
            vec_with_zeros(&mut r, m, -2.0, 2.0)?,
        )?;
        let mut xg = x.clone();
        for j in 0..m {
            let g = mv.gamma.data()[j];
            xg.plane_mut(j).iter_mut().for_each(|v| *v *= g);
        }
        let unfolded = gfm(&xg, &k, &mv)?;
        worst = worst.max(dmc(&x, &k, &mv)?.max_abs_diff(&unfolded)?);
    }
    Ok((worst <= 1e-10, format!("max |folded - unfolded| = {worst:.3e} over 1000 trials (tol 1e-10)")))
}

/// The three cost rows printed by `didnet flops`: `(label, h, w, feature, fold)`.
pub fn cost_rows() -> Vec<(&'static str, u64, u64, u64, u64)> {
    [("720x480", 720, 480), ("1920x1080", 1080, 1920), ("3840x2160", 2160, 3840)]
        .into_iter()
        .map(|(label, h, w)| {
            let (feat, fold) = modulation_cost(h, w, 64, 64);
            (label, h, w, feat, fold)
        })
        .collect()
}

pub fn cost_table() -> Result<(bool, String)> {
    let want = [(44_236_800, 4_224), (265_420_800, 4_224), (1_061_683_200, 4_224)];
    let rows = cost_rows();
    let exact = rows.iter().zip(want).all(|(r, w)| (r.3, r.4) == w);
    let ratio = rows[1].3 as f64 / rows[1].4 as f64;
    Ok((exact && ratio > 6e4, format!("rows exact: {exact}; 1080p ratio {ratio:.0} (need > 6e4)")))
}

pub fn wavelet_properties() -> Result<(bool, String)> {
    let mut r = rng(4);
    let (mut recon, mut parseval, mut ident) = (0.0f64, 0.0f64, 0.0f64);
    for t in 0..100u64 {
        let (c, h, w) = (r.gen_range(1..5), 2 * r.gen_range(1..9), 2 * r.gen_range(1..9));
        let x = Tensor::uniform(&[c, h, w], -1.0, 1.0, t)?;
        let co = dwt2_haar(&x)?;
        recon = recon.max(idwt2_haar(&co)?.max_abs_diff(&x)?);
        let e: f64 = [&co.ll, &co.lh, &co.hl, &co.hh].iter().map(|s| s.sq_norm()).sum();
        parseval = parseval.max((x.sq_norm() - e).abs() / x.sq_norm());
        if t < 20 {
            ident = ident.max(wavelet_attention(&x, &WAParams::zeros(c, c)?)?.max_abs_diff(&x)?);
        }
    }
    let ok = recon <= 1e-12 && parseval <= 1e-12 && ident <= 1e-12;
    Ok((ok, format!("reconstruction {recon:.1e}, Parseval {parseval:.1e}, zero-branch attention {ident:.1e} (tol 1e-12)")))
}

pub fn deformable_degeneracy() -> Result<(bool, String)> {
    let mut r = rng(5);
    let mut worst = 0.0f64;
    for t in 0..100u64 {
        let (c, n, k) = (r.gen_range(1..5), r.gen_range(1..5), [1, 3, 5][r.gen_range(0..3)]);
        let (h, w) = (r.gen_range(1..9), r.gen_range(1..9));
        let x = Tensor::uniform(&[c, h, w], -1.0, 1.0, t)?;
        let kern = ConvKernel::new(Tensor::uniform(&[n, c, k, k], -1.0, 1.0, t + 500)?, Tensor::uniform(&[n], -1.0, 1.0, t + 900)?)?;
        let off = OffsetField::uniform_shift(k * k, h, w, 0.0, 0.0)?;
        worst = worst.max(deform_conv2d(&x, &kern, &off)?.max_abs_diff(&conv2d(&x, &kern, 1, Padding::Same)?)?);
    }
    // Content moved by (dy, dx) is recovered by offsets of (dy, dx).
    let (h, w, dy, dx) = (12usize, 14usize, 2usize, 1usize);
    let x = Tensor::uniform(&[2, h, w], -1.0, 1.0, 77)?;
    let mut moved = Tensor::zeros(&[2, h, w])?;
    for c in 0..2 {
        for y in dy..h {
            for xx in dx..w {
                moved.data_mut()[(c * h + y) * w + xx] = x.data()[(c * h + y - dy) * w + xx - dx];
            }
        }
    }
    let kern = ConvKernel::random(3, 2, 3, 78)?;
    let got: Tensor = deform_conv2d(&moved, &kern, &OffsetField::uniform_shift(9, h, w, dy as f64, dx as f64)?)?;
    let want = conv2d(&x, &kern, 1, Padding::Same)?;
    let mut shift = 0.0f64;
    for o in 0..3 {
        for y in 1..h - dy - 1 {
            for xx in 1..w - dx - 1 {
                shift = shift.max((got.data()[(o * h + y) * w + xx] - want.data()[(o * h + y) * w + xx]).abs());
            }
        }
    }
    Ok((worst <= 1e-12 && shift <= 1e-12, format!("zero-offset vs conv {worst:.1e}; shift compensation {shift:.1e} (tol 1e-12)")))
}

fn sq_sum<'t>(y: Var<'t>) -> Result<Var<'t>> {
    y.mul(y)?.sum()
}

/// Finite-difference checks for every recorded op, then the tiny network.
pub fn gradient_checks() -> Result<(bool, String)> {
    let mut ops: Vec<(&str, f64)> = Vec::new();
    let u = |shape: &[usize], s| Tensor::uniform(shape, -1.0, 1.0, s);
    let x = u(&[2, 6, 6], 1)?;
    let other = u(&[2, 6, 6], 2)?;
    let w3 = u(&[3, 2, 3, 3], 3)?;
    let b3 = u(&[3], 4)?;
    let off = Tensor::<f64>::uniform(&[18, 6, 6], -1.7, 1.7, 5)?.map(|v| v.floor() + 0.25 + 0.5 * (v - v.floor()));
    let row = u(&[2, 1, 1], 6)?;
    let wa = WAParams::<f64>::random(2, 3, 7)?;
    let eps = 1e-6;

    ops.push(("add", grad_check(|t, v| sq_sum(v.add(t.constant(other.clone()))?), &x, eps)?));
    ops.push(("sub", grad_check(|t, v| sq_sum(t.constant(other.clone()).sub(v)?), &x, eps)?));
    ops.push(("mul", grad_check(|t, v| sq_sum(v.mul(t.constant(other.clone()))?), &x, eps)?));
    ops.push(("mul-broadcast", grad_check(|t, v| sq_sum(t.constant(x.clone()).mul(v)?), &row, eps)?));
    ops.push(("scale", grad_check(|_, v| sq_sum(v.scale(-1.7)?), &x, eps)?));
    ops.push(("add_scalar", grad_check(|_, v| sq_sum(v.add_scalar(0.3)?), &x, eps)?));
    ops.push(("mean", grad_check(|_, v| v.mul(v)?.mean(), &x, eps)?));
    ops.push(("l1", grad_check(|t, v| v.l1_loss(t.constant(other.clone())), &x, eps)?));
    ops.push(("sigmoid", grad_check(|_, v| sq_sum(v.sigmoid()?), &x, eps)?));
    ops.push(("leaky_relu", grad_check(|_, v| sq_sum(v.leaky_relu(0.1)?), &x, eps)?));
    ops.push(("reshape", grad_check(|t, v| sq_sum(v.reshape(&[72])?.mul(t.constant(other.clone().reshape(&[72])?))?), &x, eps)?));
    ops.push(("narrow", grad_check(|_, v| sq_sum(v.narrow(1, 1)?), &x, eps)?));
    ops.push(("concat", grad_check(|t, v| sq_sum(Var::concat(&[v, t.constant(other.clone()), v])?.sigmoid()?), &x, eps)?));
    ops.push(("conv2d", grad_check(|t, v| sq_sum(v.conv2d(t.constant(w3.clone()), Some(t.constant(b3.clone())), 1, Padding::Same)?), &x, eps)?));
    ops.push(("conv2d-stride2", grad_check(|t, v| sq_sum(v.conv2d(t.constant(w3.clone()), None, 2, Padding::Same)?), &x, eps)?));
    ops.push(("conv2d-weight", grad_check(|t, v| sq_sum(t.constant(x.clone()).conv2d(v, Some(t.constant(b3.clone())), 1, Padding::Valid)?), &w3, eps)?));
    ops.push(("deform-input", grad_check(|t, v| sq_sum(v.deform_conv2d(t.constant(w3.clone()), Some(t.constant(b3.clone())), t.constant(off.clone()))?), &x, eps)?));
    ops.push(("deform-weight", grad_check(|t, v| sq_sum(t.constant(x.clone()).deform_conv2d(v, None, t.constant(off.clone()))?), &w3, eps)?));
    ops.push(("deform-offsets", grad_check(|t, v| sq_sum(t.constant(x.clone()).deform_conv2d(t.constant(w3.clone()), None, v)?), &off, eps)?));
    let (g, be) = (u(&[2], 8)?, u(&[2], 9)?);
    ops.push(("instance_norm", grad_check(|t, v| sq_sum(v.instance_norm(Some(t.constant(g.clone())), Some(t.constant(be.clone())), 1e-5)?.mul(t.constant(other.clone()))?), &x, eps)?));
    ops.push(("instance_norm-affine", grad_check(|t, v| sq_sum(t.constant(x.clone()).instance_norm(Some(v), Some(t.constant(be.clone())), 1e-5)?.mul(t.constant(other.clone()))?), &g, eps)?));
    ops.push(("avg_pool2", grad_check(|_, v| sq_sum(v.avg_pool2()?), &x, eps)?));
    ops.push(("global_avg_pool", grad_check(|_, v| sq_sum(v.global_avg_pool()?), &x, eps)?));
    ops.push(("upsample2", grad_check(|t, v| sq_sum(v.upsample2()?.mul(t.constant(u(&[2, 12, 12], 10).unwrap()))?), &x, eps)?));
    ops.push(("dwt2", grad_check(|t, v| sq_sum(v.dwt2()?.mul(t.constant(u(&[8, 3, 3], 11).unwrap()))?), &x, eps)?));
    ops.push(("idwt2", grad_check(|t, v| sq_sum(v.idwt2()?.mul(t.constant(u(&[2, 6, 6], 12).unwrap()))?), &u(&[8, 3, 3], 13)?, eps)?));
    ops.push(("wavelet_attention", grad_check(|t, v| sq_sum(wavelet_attention_var(v, &WAVars::constants(t, &wa))?), &x, eps)?));
    let dk = ConvKernel::<f64>::random(3, 2, 1, 14)?;
    let (al, bt, gm) = (u(&[3], 15)?, u(&[3], 16)?, u(&[2], 17)?);
    ops.push(("dmc-gamma", grad_check(|t, v| {
        sq_sum(crate::modulation::dmc_var(t.constant(x.clone()), t.constant(dk.weight.clone()), t.constant(dk.bias.clone()), t.constant(al.clone()), t.constant(bt.clone()), v)?)
    }, &gm, eps)?));

    let (op_name, op_worst) = ops.iter().fold(("", 0.0f64), |acc, &(n, e)| if e > acc.1 { (n, e) } else { acc });
    let e2e = tiny_network_grad_check()?;
    let ok = op_worst <= 1e-4 && e2e <= 1e-3;
    Ok((ok, format!("{} ops, worst {op_worst:.1e} ({op_name}, tol 1e-4); tiny network {e2e:.1e} (tol 1e-3)", ops.len())))
}

/// Largest relative error over one entry in each of a spread of tiny-preset
/// parameters, on a 64x64 seven-frame clip.
pub fn tiny_network_grad_check() -> Result<f64> {
    let cfg = NetConfig::tiny();
    let mut p = net::init_params::<f64>(&cfg, 3)?;
    // Zero-initialised heads would leave the offset and condition paths
    // outside the check.
    for (name, scale, seed) in [("tsaf.off.head.w", 0.02, 1), ("tsaf.off.head.b", 0.3, 2), ("cond.head.w", 0.05, 3)] {
        let t = p.get_mut(name)?;
        *t = Tensor::uniform(t.shape(), -scale, scale, seed)?;
    }
    let s = cfg.size_multiple();
    let frames: Vec<Tensor> = (0..7).map(|i| Tensor::uniform(&[3, s, s], 0.0, 1.0, 100 + i)).collect::<Result<_>>()?;
    let hdr_t = Tensor::uniform(&[3, s, s], 0.0, 1.0, 200)?;
    let sdr_t = Tensor::uniform(&[3, s, s], 0.0, 1.0, 201)?;
    let names = [
        "tsaf.shallow.w", "tsaf.off.e1.w", "tsaf.off.head.w", "tsaf.align.w", "tsaf.fuse.b",
        "tsaf.res1.conv2.w", "aux.head.w", "ffe.gate.w", "dmitm.layer2.w", "hdr.head.b",
        "cond.block5.w", "cond.head.w",
    ];
    let mut worst = 0.0f64;
    for (k, name) in names.iter().enumerate() {
        let x = p.get(name)?.clone();
        let idx = [(k * 7919) % x.len()];
        let err = grad_check_at(
            |tape: &Tape<f64>, v| {
                let mut b = p.bind(tape, false);
                b.replace(name, v)?;
                let vars: Vec<_> = frames.iter().map(|f| tape.constant(f.clone())).collect();
                let out = net::forward(&cfg, &b, &vars)?;
                net::loss_dual(out.hdr, tape.constant(hdr_t.clone()), out.sdr, tape.constant(sdr_t.clone()), 0.8, 0.2)
            },
            &x,
            1e-6,
            &idx,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

pub fn color_pipeline() -> Result<(bool, String)> {
    let (mut pq, mut bt, mut gam, mut achrom) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..=10_000 {
        let v = i as f64 / 10_000.0;
        // Log-spaced luminance from 1e-3 to 1e4 nits.
        let nits = 10f64.powf(-3.0 + 7.0 * v);
        let back = color::pq_eotf(color::pq_oetf(nits, color::PQ_PEAK_NITS)?, color::PQ_PEAK_NITS);
        pq = pq.max((back - nits).abs() / nits);
        let l = color::bt709_eotf(v);
        bt = bt.max((color::bt709_oetf(l) - v).abs() / v.max(1e-6));
    }
    let rgb = Tensor::uniform(&[3, 16, 16], 0.0, 1.0, 7)?;
    let there = color::gamut_convert(&rgb, Gamut::Bt709ToBt2020)?;
    gam = gam.max(color::gamut_convert(&there, Gamut::Bt2020ToBt709)?.max_abs_diff(&rgb)?);
    for i in 0..=100 {
        let y = i as f64 * 100.0;
        let itp = color::itp_from_linear2020([y, y, y]);
        achrom = achrom.max(itp[1].abs()).max(itp[2].abs());
    }
    let ok = pq <= 1e-6 && bt <= 1e-6 && gam <= 1e-9 && achrom <= 1e-12;
    Ok((ok, format!("PQ {pq:.1e}, BT.709 {bt:.1e} (tol 1e-6 rel); gamut {gam:.1e} (tol 1e-9); achromatic |T|,|P| {achrom:.1e}")))
}

/// Mean MSE and PSNR of the degraded middle frame over a small synthetic
/// corpus, per QP label.
pub fn degradation_table(clips: usize, size: usize) -> Result<Vec<(u32, f64, f64)>> {
    let sources: Vec<Vec<Frame>> = (0..clips as u64).map(|s| hdr_clip(SourceOptions::new(size, size), s)).collect::<Result<_>>()?;
    QP_LABELS
        .iter()
        .map(|&qp| {
            let (mut mse, mut psnr) = (0.0, 0.0);
            for (s, src) in sources.iter().enumerate() {
                let pair = synth_clip_pair(src, qp, s as u64)?;
                mse += metrics::mse(&pair.lq_sdr[MID].pixels, &pair.hq_sdr_mid.pixels)?;
                psnr += metrics::psnr(&pair.lq_sdr[MID], &pair.hq_sdr_mid, 1.0)?;
            }
            Ok((qp, mse / clips as f64, psnr / clips as f64))
        })
        .collect()
}

pub fn degradation_monotonicity() -> Result<(bool, String)> {
    let rows = degradation_table(6, 64)?;
    let ok = rows.windows(2).all(|w| w[1].1 > w[0].1 && w[1].2 < w[0].2);
    let detail = rows.iter().map(|(q, m, p)| format!("qp{q}: mse {m:.2e} psnr {p:.2}")).collect::<Vec<_>>().join(", ");
    Ok((ok, detail))
}

fn const_frame(space: ColorSpace, h: usize, w: usize, v: f64) -> Result<Frame> {
    Frame::new(Tensor::full(&[3, h, w], v)?, space, BitDepth::Float)
}

pub fn metric_sanity() -> Result<(bool, String)> {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    let sdr = ColorSpace::SdrBt709;
    let a = Frame::new(Tensor::uniform(&[3, 32, 40], 0.0, 1.0, 1)?, sdr, BitDepth::Float)?;
    let b = Frame::new(Tensor::uniform(&[3, 32, 40], 0.0, 1.0, 2)?, sdr, BitDepth::Float)?;
    check("psnr identity", metrics::psnr(&a, &a, 1.0)? == metrics::PSNR_CAP_DB);
    check("psnr symmetry", metrics::psnr(&a, &b, 1.0)? == metrics::psnr(&b, &a, 1.0)?);
    let (c3, c4) = (const_frame(sdr, 8, 8, 0.3)?, const_frame(sdr, 8, 8, 0.4)?);
    check("psnr closed form", (metrics::psnr(&c3, &c4, 1.0)? - 20.0).abs() < 1e-9);
    check("ssim identity", metrics::ssim(&a, &a)? == 1.0);
    check("ssim symmetry", metrics::ssim(&a, &b)? == metrics::ssim(&b, &a)?);
    let (ca, cb) = (const_frame(sdr, 16, 16, 0.4)?, const_frame(sdr, 16, 16, 0.5)?);
    let c1 = 0.01f64.powi(2);
    let lum = (2.0 * 0.4 * 0.5 + c1) / (0.16 + 0.25 + c1);
    check("ssim constant-image closed form", (metrics::ssim(&ca, &cb)? - lum).abs() < 1e-12);
    let big_a = Frame::new(Tensor::uniform(&[3, 176, 176], 0.0, 1.0, 3)?, sdr, BitDepth::Float)?;
    let big_b = Frame::new(Tensor::uniform(&[3, 176, 176], 0.0, 1.0, 4)?, sdr, BitDepth::Float)?;
    check("ms-ssim identity", (metrics::ms_ssim(&big_a, &big_a)? - 1.0).abs() < 1e-12);
    check("ms-ssim symmetry", metrics::ms_ssim(&big_a, &big_b)? == metrics::ms_ssim(&big_b, &big_a)?);
    let hdr = ColorSpace::HdrBt2020Pq;
    let (ha, hb) = (const_frame(hdr, 8, 8, 0.5)?, const_frame(hdr, 8, 8, 0.6)?);
    check("delta-e identity", metrics::delta_e_itp(&ha, &ha)? == 0.0);
    check("delta-e symmetry", metrics::delta_e_itp(&ha, &hb)? == metrics::delta_e_itp(&hb, &ha)?);
    // Grey pixels differ only in I, which is the PQ code itself.
    check("delta-e grey closed form", (metrics::delta_e_itp(&ha, &hb)? - 72.0).abs() < 1e-6);
    check("temporal std of constant error", metrics::temporal_std_delta_e(&[ha.clone(), ha.clone()], &[hb.clone(), hb.clone()])?.abs() < 1e-12);
    Ok((failures.is_empty(), if failures.is_empty() { "12 cases exact".into() } else { format!("failed: {}", failures.join(", ")) }))
}
