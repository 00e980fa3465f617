//! Optimiser, training loop and held-out evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{forward, infer, init_params, loss_dual, LogRow, NetConfig, Params};
use crate::color::{inverse_tonemap, ColorSpace, Frame};
use crate::degradation::{ClipPair, CLIP_LEN, MID};
use crate::error::{Error, Result};
use crate::metrics::{delta_e_itp, psnr, MetricReport};
use crate::tensor::{Real, Tape, Tensor};
use crate::wavelet::hf_psnr;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Steps at the initial rate before the first halving.
    pub lr_hold: usize,
    /// Steps between halvings afterwards.
    pub lr_every: usize,
    pub main_weight: f64,
    pub aux_weight: f64,
    pub seed: u64,
    /// Random horizontal/vertical flips of each sample.
    pub augment: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Calls the checkpoint hook every this many steps; 0 disables it.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            lr: 5e-4,
            lr_hold: 1000,
            lr_every: 500,
            main_weight: 0.8,
            aux_weight: 0.2,
            seed: 0,
            augment: true,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            checkpoint_every: 0,
        }
    }
}

/// Step-decay schedule: constant for `lr_hold` steps, then halved at the
/// start of every `lr_every`-step window.
pub fn lr_at(cfg: &TrainConfig, step: usize) -> f64 {
    if step < cfg.lr_hold || cfg.lr_every == 0 {
        return cfg.lr;
    }
    let halvings = (step - cfg.lr_hold) / cfg.lr_every + 1;
    cfg.lr * 0.5f64.powi(halvings as i32)
}

/// Adaptive-moment optimiser with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T: Real> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &Params<T>, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect::<Result<Vec<_>>>();
        Ok(Self { m: zeros()?, v: zeros()?, t: 0, beta1, beta2, eps })
    }

    /// Applies one update; `grads[i]` of `None` counts as zero.
    pub fn step(&mut self, params: &mut Params<T>, grads: &[Option<Tensor<T>>], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::Contract(format!("{} gradients for {} parameters", grads.len(), self.m.len())));
        }
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(self.t));
        let c2 = T::of(1.0 - self.beta2.powi(self.t));
        let (lr, eps, one) = (T::of(lr), T::of(self.eps), T::one());
        for (i, p) in params.tensors_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                *w -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Clips used for training or evaluation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub clips: Vec<ClipPair>,
}

fn flip<T: Real>(t: &Tensor<T>, horizontal: bool, vertical: bool) -> Result<Tensor<T>> {
    if !horizontal && !vertical {
        return Ok(t.clone());
    }
    let (c, h, w) = t.chw()?;
    let mut out = t.clone();
    let (src, dst) = (t.data(), out.data_mut());
    for ch in 0..c {
        for y in 0..h {
            let sy = if vertical { h - 1 - y } else { y };
            for x in 0..w {
                let sx = if horizontal { w - 1 - x } else { x };
                dst[(ch * h + y) * w + x] = src[(ch * h + sy) * w + sx];
            }
        }
    }
    Ok(out)
}

/// `(lq frames, hdr target, sdr target)` as tensors of `T`.
pub fn sample_tensors<T: Real>(clip: &ClipPair, flip_h: bool, flip_v: bool) -> Result<(Vec<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let conv = |f: &Frame| flip(&f.pixels.cast::<T>(), flip_h, flip_v);
    let lq = clip.lq_sdr.iter().map(conv).collect::<Result<Vec<_>>>()?;
    Ok((lq, conv(&clip.hq_hdr_mid)?, conv(&clip.hq_sdr_mid)?))
}

pub struct TrainOutcome<T: Real> {
    pub params: Params<T>,
    pub log: Vec<LogRow>,
}

/// Trains from `init` (or a fresh seeded initialisation) on `data`.
/// `on_checkpoint(step, params)` runs every `checkpoint_every` steps and
/// after the last one.
pub fn train<T: Real>(
    net: &NetConfig,
    tc: &TrainConfig,
    data: &Dataset,
    init: Option<Params<T>>,
    mut on_checkpoint: impl FnMut(usize, &Params<T>) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    if data.clips.is_empty() {
        return Err(Error::Contract("training needs at least one clip".into()));
    }
    let mut params = match init {
        Some(p) => p,
        None => init_params(net, tc.seed)?,
    };
    let mut adam = Adam::new(&params, tc.beta1, tc.beta2, tc.eps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x5eed);
    let mut log = Vec::with_capacity(tc.steps);
    let mut tape = Tape::new();
    for step in 0..tc.steps {
        let clip = &data.clips[rng.gen_range(0..data.clips.len())];
        let (fh, fv) = if tc.augment { (rng.gen::<bool>(), rng.gen::<bool>()) } else { (false, false) };
        let (lq, hdr_t, sdr_t) = sample_tensors::<T>(clip, fh, fv)?;
        let lr = lr_at(tc, step);
        let (loss, grads) = {
            let bound = params.bind(&tape, true);
            let frames: Vec<_> = lq.into_iter().map(|f| tape.constant(f)).collect();
            let run = || -> Result<_> {
                let out = forward(net, &bound, &frames)?;
                let loss = loss_dual(out.hdr, tape.constant(hdr_t), out.sdr, tape.constant(sdr_t), tc.main_weight, tc.aux_weight)?;
                tape.backward(loss)?;
                Ok(loss.value().data()[0].as_f64())
            };
            let loss = run().map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("training diverged at step {step}: {m}")),
                other => other,
            })?;
            (loss, bound.iter().map(|(_, v)| v.grad()).collect::<Vec<_>>())
        };
        tape.clear();
        adam.step(&mut params, &grads, lr)?;
        log.push(LogRow { step, loss, lr });
        if tc.checkpoint_every > 0 && (step + 1) % tc.checkpoint_every == 0 && step + 1 != tc.steps {
            on_checkpoint(step + 1, &params)?;
        }
    }
    on_checkpoint(tc.steps, &params)?;
    Ok(TrainOutcome { params, log })
}

/// Held-out means over a set of clips.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalSummary {
    pub psnr_hdr: f64,
    pub psnr_sdr: f64,
    pub psnr_lq_sdr: f64,
    pub psnr_baseline: f64,
    pub hf_psnr_hdr: f64,
    pub delta_e: f64,
    pub reports: Vec<MetricReport>,
}

/// Runs the network on the centre frame of each clip and scores it against
/// the clean targets, alongside the analytic inverse of the grade.
pub fn evaluate<T: Real>(net: &NetConfig, params: &Params<T>, clips: &[ClipPair]) -> Result<EvalSummary> {
    if clips.is_empty() {
        return Err(Error::Contract("evaluation needs at least one clip".into()));
    }
    let mut s = EvalSummary::default();
    for (i, clip) in clips.iter().enumerate() {
        let (lq, _, _) = sample_tensors::<T>(clip, false, false)?;
        let (hdr, sdr) = infer(net, params, &lq)?;
        let hdr = Frame::clamped(hdr.cast(), ColorSpace::HdrBt2020Pq)?;
        let sdr = Frame::clamped(sdr.cast(), ColorSpace::SdrBt709)?;
        let base = inverse_tonemap(&clip.lq_sdr[MID])?;
        let mut r = MetricReport::new(format!("clip{i:03}"), clip.qp_label);
        r.push("psnr_hdr", psnr(&hdr, &clip.hq_hdr_mid, 1.0)?);
        r.push("psnr_sdr", psnr(&sdr, &clip.hq_sdr_mid, 1.0)?);
        r.push("psnr_lq_sdr", psnr(&clip.lq_sdr[MID], &clip.hq_sdr_mid, 1.0)?);
        r.push("psnr_baseline", psnr(&base, &clip.hq_hdr_mid, 1.0)?);
        r.push("hf_psnr_hdr", hf_psnr(&hdr, &clip.hq_hdr_mid)?);
        r.push("delta_e_itp", delta_e_itp(&hdr, &clip.hq_hdr_mid)?);
        s.reports.push(r);
    }
    let mean = |m: &str| s.reports.iter().filter_map(|r| r.mean(m)).sum::<f64>() / s.reports.len() as f64;
    s.psnr_hdr = mean("psnr_hdr");
    s.psnr_sdr = mean("psnr_sdr");
    s.psnr_lq_sdr = mean("psnr_lq_sdr");
    s.psnr_baseline = mean("psnr_baseline");
    s.hf_psnr_hdr = mean("hf_psnr_hdr");
    s.delta_e = mean("delta_e_itp");
    Ok(s)
}

/// HDR output for every frame of a sequence, each from a 7-frame window
/// centred on it with edge frames repeated.
pub fn temporal_outputs<T: Real>(net: &NetConfig, params: &Params<T>, lq: &[Frame]) -> Result<Vec<Frame>> {
    if lq.is_empty() {
        return Err(Error::Contract("empty sequence".into()));
    }
    let frames: Vec<Tensor<T>> = lq.iter().map(|f| f.pixels.cast()).collect();
    let last = frames.len() as isize - 1;
    (0..frames.len() as isize)
        .map(|t| {
            let window: Vec<Tensor<T>> = (0..CLIP_LEN as isize)
                .map(|k| frames[(t + k - MID as isize).clamp(0, last) as usize].clone())
                .collect();
            let (hdr, _) = infer(net, params, &window)?;
            Frame::clamped(hdr.cast(), ColorSpace::HdrBt2020Pq)
        })
        .collect()
}
