//! The dual-degradation network: temporal-spatial aligned fusion, an
//! auxiliary SDR head, wavelet-attention enhancement, dual-modulated inverse
//! tone mapping and the clip-level condition network.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, read_trainlog, save_checkpoint, write_trainlog, LogRow};
pub use train::{
    evaluate, lr_at, sample_tensors, temporal_outputs, train, Adam, Dataset, EvalSummary, TrainConfig, TrainOutcome,
};

use std::collections::HashMap;

use crate::color::{inverse_tonemap, ColorSpace, Frame};
use crate::degradation::{CLIP_LEN, MID};
use crate::error::{shape_err, Error, Result};
use crate::modulation::dmc_var;
use crate::nn::{Padding, LEAKY_SLOPE};
use crate::tensor::{Real, Tape, Tensor, Var};
use crate::wavelet::{wavelet_attention_var, WAVars};

const IN_EPS: f64 = 1e-5;

/// Architecture and ablation switches.
#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    /// Feature width `C_f` of the fusion, enhancement and mapping stages.
    pub channels: usize,
    pub res_blocks: usize,
    pub dmc_layers: usize,
    pub color_blocks: usize,
    pub cond_channels: usize,
    /// Per-frame feature width entering the deformable alignment.
    pub align_channels: usize,
    pub offset_channels: usize,
    pub use_wa: bool,
    /// When false the modulation vectors are fixed at their neutral values.
    pub use_prior: bool,
    /// When false only the centre frame is used and no offsets are predicted.
    pub temporal: bool,
    /// When false the mapping layers are plain 1x1 convolutions.
    pub use_modulation: bool,
    /// Drop the activations between mapping layers.
    pub linear_dmitm: bool,
    /// Adds the centre LQ frame to the auxiliary head output.
    pub sdr_residual: bool,
    /// Adds the analytic inverse grade of the centre LQ frame to the HDR
    /// head output.
    pub hdr_residual: bool,
}

impl NetConfig {
    pub fn tiny() -> Self {
        Self {
            channels: 16,
            res_blocks: 2,
            dmc_layers: 3,
            color_blocks: 6,
            cond_channels: 16,
            align_channels: 8,
            offset_channels: 8,
            use_wa: true,
            use_prior: true,
            temporal: true,
            use_modulation: true,
            linear_dmitm: false,
            sdr_residual: false,
            hdr_residual: false,
        }
    }

    pub fn standard() -> Self {
        Self { channels: 32, res_blocks: 4, cond_channels: 32, align_channels: 16, offset_channels: 16, ..Self::tiny() }
    }

    /// Spatial sides must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        (1usize << self.color_blocks).max(4)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("channels", self.channels.to_string()),
            ("res_blocks", self.res_blocks.to_string()),
            ("dmc_layers", self.dmc_layers.to_string()),
            ("color_blocks", self.color_blocks.to_string()),
            ("cond_channels", self.cond_channels.to_string()),
            ("align_channels", self.align_channels.to_string()),
            ("offset_channels", self.offset_channels.to_string()),
            ("use_wa", self.use_wa.to_string()),
            ("use_prior", self.use_prior.to_string()),
            ("temporal", self.temporal.to_string()),
            ("use_modulation", self.use_modulation.to_string()),
            ("linear_dmitm", self.linear_dmitm.to_string()),
            ("sdr_residual", self.sdr_residual.to_string()),
            ("hdr_residual", self.hdr_residual.to_string()),
        ]
    }

    /// Applies one `key=value` setting; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = || value.parse::<usize>().map_err(|_| Error::Config(format!("{key}: expected an integer, got {value:?}")));
        let flag = || value.parse::<bool>().map_err(|_| Error::Config(format!("{key}: expected true/false, got {value:?}")));
        match key {
            "channels" => self.channels = num()?,
            "res_blocks" => self.res_blocks = num()?,
            "dmc_layers" => self.dmc_layers = num()?,
            "color_blocks" => self.color_blocks = num()?,
            "cond_channels" => self.cond_channels = num()?,
            "align_channels" => self.align_channels = num()?,
            "offset_channels" => self.offset_channels = num()?,
            "use_wa" => self.use_wa = flag()?,
            "use_prior" => self.use_prior = flag()?,
            "temporal" => self.temporal = flag()?,
            "use_modulation" => self.use_modulation = flag()?,
            "linear_dmitm" => self.linear_dmitm = flag()?,
            "sdr_residual" => self.sdr_residual = flag()?,
            "hdr_residual" => self.hdr_residual = flag()?,
            _ => return Err(Error::Config(format!("unknown network key {key:?}"))),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.dmc_layers == 0 || self.cond_channels == 0 || self.align_channels == 0 || self.offset_channels == 0 {
            return Err(Error::Config("network widths and layer counts must be positive".into()));
        }
        Ok(())
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T = f32> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Real> Default for Params<T> {
    fn default() -> Self {
        Self { entries: Vec::new(), index: HashMap::new() }
    }
}

impl<T: Real> Params<T> {
    pub fn insert(&mut self, name: &str, t: Tensor<T>) {
        match self.index.get(name) {
            Some(&i) => self.entries[i].1 = t,
            None => {
                self.index.insert(name.to_string(), self.entries.len());
                self.entries.push((name.to_string(), t));
            }
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1).ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].1),
            None => Err(Error::Config(format!("missing parameter {name}"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params { entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect(), index: self.index.clone() }
    }

    /// Records every tensor on `tape`, as gradient-collecting leaves when
    /// `trainable`.
    pub fn bind<'p, 't>(&'p self, tape: &'t Tape<T>, trainable: bool) -> Bound<'p, 't, T> {
        Bound { params: self, vars: self.entries.iter().map(|(_, t)| tape.leaf(t.clone(), trainable)).collect() }
    }

    fn conv(&mut self, name: &str, out_ch: usize, in_ch: usize, k: usize, seed: &mut u64) -> Result<()> {
        let bound = 1.0 / ((in_ch * k * k) as f64).sqrt();
        *seed += 1;
        self.insert(&format!("{name}.w"), Tensor::uniform(&[out_ch, in_ch, k, k], -bound, bound, *seed)?);
        self.insert(&format!("{name}.b"), Tensor::zeros(&[out_ch])?);
        Ok(())
    }

    fn zero_conv(&mut self, name: &str, out_ch: usize, in_ch: usize, k: usize) -> Result<()> {
        self.insert(&format!("{name}.w"), Tensor::zeros(&[out_ch, in_ch, k, k])?);
        self.insert(&format!("{name}.b"), Tensor::zeros(&[out_ch])?);
        Ok(())
    }
}

/// Parameters recorded on a tape, looked up by name.
pub struct Bound<'p, 't, T: Real> {
    params: &'p Params<T>,
    vars: Vec<Var<'t, T>>,
}

impl<'p, 't, T: Real> Bound<'p, 't, T> {
    pub fn var(&self, name: &str) -> Result<Var<'t, T>> {
        self.params.index.get(name).map(|&i| self.vars[i]).ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    /// Substitutes the handle used for `name`.
    pub fn replace(&mut self, name: &str, var: Var<'t, T>) -> Result<()> {
        let &i = self.params.index.get(name).ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
        if var.shape() != self.params.entries[i].1.shape() {
            return Err(shape_err!("replacement for {name} has shape {:?}", var.shape()));
        }
        self.vars[i] = var;
        Ok(())
    }

    /// `(name, var)` in parameter order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, Var<'t, T>)> + '_ {
        self.params.entries.iter().zip(&self.vars).map(|((n, _), v)| (n.as_str(), *v))
    }

    fn conv(&self, x: Var<'t, T>, name: &str, stride: usize) -> Result<Var<'t, T>> {
        x.conv2d(self.var(&format!("{name}.w"))?, Some(self.var(&format!("{name}.b"))?), stride, Padding::Same)
    }
}

/// Seeded initial parameters. The offset head and the condition head start
/// at zero, so offsets are zero and the modulation is neutral.
pub fn init_params<T: Real>(cfg: &NetConfig, seed: u64) -> Result<Params<T>> {
    cfg.validate()?;
    let mut p = Params::default();
    let mut s = seed.wrapping_mul(1000);
    let (a, c, o, cc) = (cfg.align_channels, cfg.channels, cfg.offset_channels, cfg.cond_channels);
    let taps = 9;
    p.conv("tsaf.shallow", a, 3, 3, &mut s)?;
    p.conv("tsaf.off.e0", o, 3 * CLIP_LEN, 3, &mut s)?;
    p.conv("tsaf.off.e1", o, o, 3, &mut s)?;
    p.conv("tsaf.off.e2", o, o, 3, &mut s)?;
    p.conv("tsaf.off.d1", o, 2 * o, 3, &mut s)?;
    p.conv("tsaf.off.d0", o, 2 * o, 3, &mut s)?;
    p.zero_conv("tsaf.off.head", 2 * taps * (CLIP_LEN - 1), o, 1)?;
    p.conv("tsaf.align", a, a, 3, &mut s)?;
    p.conv("tsaf.fuse", c, a * CLIP_LEN, 1, &mut s)?;
    for r in 0..cfg.res_blocks {
        p.conv(&format!("tsaf.res{r}.conv1"), c, c, 3, &mut s)?;
        p.conv(&format!("tsaf.res{r}.conv2"), c, c, 3, &mut s)?;
    }
    p.conv("aux.head", 3, c, 3, &mut s)?;
    p.conv("ffe.reduce", c, 4 * c, 1, &mut s)?;
    p.conv("ffe.gate", c, c, 1, &mut s)?;
    p.conv("ffe.expand", 4 * c, c, 1, &mut s)?;
    for l in 0..cfg.dmc_layers {
        p.conv(&format!("dmitm.layer{l}"), c, c, 1, &mut s)?;
    }
    p.conv("hdr.head", 3, c, 3, &mut s)?;
    let mut in_ch = 3 * CLIP_LEN;
    for b in 0..cfg.color_blocks {
        p.conv(&format!("cond.block{b}"), cc, in_ch, 1, &mut s)?;
        in_ch = cc;
    }
    let n_out = 3 * c * cfg.dmc_layers;
    p.insert("cond.head.w", Tensor::zeros(&[n_out, in_ch, 1, 1])?);
    p.insert("cond.head.b", neutral_bias(c, cfg.dmc_layers)?);
    Ok(p)
}

/// `(alpha, beta, gamma)` per layer laid out as `[a; b; g]` blocks of width `c`.
fn neutral_bias<T: Real>(c: usize, layers: usize) -> Result<Tensor<T>> {
    let mut v = Vec::with_capacity(3 * c * layers);
    for _ in 0..layers {
        v.extend(std::iter::repeat(1.0).take(c));
        v.extend(std::iter::repeat(0.0).take(c));
        v.extend(std::iter::repeat(1.0).take(c));
    }
    Tensor::from_f64(&[3 * c * layers], &v)
}

/// Per-layer modulation vectors on the tape.
pub type PriorVars<'t, T> = Vec<[Var<'t, T>; 3]>;

/// Network outputs for one clip.
pub struct Outputs<'t, T: Real> {
    pub hdr: Var<'t, T>,
    pub sdr: Var<'t, T>,
    /// `[12 * taps, H, W]` offsets for the six neighbours, when predicted.
    pub offsets: Option<Var<'t, T>>,
    pub prior: PriorVars<'t, T>,
}

fn lrelu<'t, T: Real>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    x.leaky_relu(LEAKY_SLOPE)
}

fn check_clip<T: Real>(cfg: &NetConfig, frames: &[Var<'_, T>]) -> Result<(usize, usize)> {
    if frames.len() != CLIP_LEN {
        return Err(Error::Contract(format!("a clip has {CLIP_LEN} frames, got {}", frames.len())));
    }
    let shape = frames[0].shape();
    let &[3, h, w] = shape.as_slice() else {
        return Err(shape_err!("frames must be [3, H, W], got {shape:?}"));
    };
    if frames.iter().any(|f| f.shape() != shape) {
        return Err(shape_err!("clip frames differ in size"));
    }
    let m = cfg.size_multiple();
    if h % m != 0 || w % m != 0 {
        return Err(shape_err!("frame sides must be multiples of {m}, got {h}x{w}"));
    }
    Ok((h, w))
}

/// Two-level encoder-decoder over the stacked clip emitting offsets for
/// the six neighbours.
pub fn offset_predictor<'t, T: Real>(p: &Bound<'_, 't, T>, stack: Var<'t, T>) -> Result<Var<'t, T>> {
    let e0 = lrelu(p.conv(stack, "tsaf.off.e0", 1)?)?;
    let e1 = lrelu(p.conv(e0, "tsaf.off.e1", 2)?)?;
    let e2 = lrelu(p.conv(e1, "tsaf.off.e2", 2)?)?;
    let d1 = lrelu(p.conv(Var::concat(&[e2.upsample2()?, e1])?, "tsaf.off.d1", 1)?)?;
    let d0 = lrelu(p.conv(Var::concat(&[d1.upsample2()?, e0])?, "tsaf.off.d0", 1)?)?;
    p.conv(d0, "tsaf.off.head", 1)
}

/// Aligned fusion features `[C_f, H, W]` and the predicted offsets.
pub fn tsaf<'t, T: Real>(
    cfg: &NetConfig,
    p: &Bound<'_, 't, T>,
    frames: &[Var<'t, T>],
) -> Result<(Var<'t, T>, Option<Var<'t, T>>)> {
    check_clip(cfg, frames)?;
    let shallow = |f: Var<'t, T>| lrelu(p.conv(f, "tsaf.shallow", 1)?);
    let (aw, ab) = (p.var("tsaf.align.w")?, p.var("tsaf.align.b")?);
    let centre = shallow(frames[MID])?.conv2d(aw, Some(ab), 1, Padding::Same)?;
    let (aligned, offsets) = if cfg.temporal {
        let offsets = offset_predictor(p, Var::concat(frames)?)?;
        let per = offsets.shape()[0] / (CLIP_LEN - 1);
        let mut aligned = Vec::with_capacity(CLIP_LEN);
        let mut k = 0;
        for (i, &f) in frames.iter().enumerate() {
            if i == MID {
                aligned.push(centre);
            } else {
                let off = offsets.narrow(k * per, per)?;
                aligned.push(shallow(f)?.deform_conv2d(aw, Some(ab), off)?);
                k += 1;
            }
        }
        (aligned, Some(offsets))
    } else {
        (vec![centre; CLIP_LEN], None)
    };
    let mut x = p.conv(Var::concat(&aligned)?, "tsaf.fuse", 1)?;
    for r in 0..cfg.res_blocks {
        let h = lrelu(p.conv(x, &format!("tsaf.res{r}.conv1"), 1)?)?;
        x = x.add(p.conv(h, &format!("tsaf.res{r}.conv2"), 1)?)?;
    }
    Ok((x, offsets))
}

pub fn aux_head<'t, T: Real>(p: &Bound<'_, 't, T>, fusion: Var<'t, T>) -> Result<Var<'t, T>> {
    p.conv(fusion, "aux.head", 1)
}

pub fn ffe<'t, T: Real>(cfg: &NetConfig, p: &Bound<'_, 't, T>, fusion: Var<'t, T>) -> Result<Var<'t, T>> {
    if !cfg.use_wa {
        return Ok(fusion);
    }
    let wa = WAVars {
        reduce_w: p.var("ffe.reduce.w")?,
        reduce_b: p.var("ffe.reduce.b")?,
        gate_w: p.var("ffe.gate.w")?,
        gate_b: p.var("ffe.gate.b")?,
        expand_w: p.var("ffe.expand.w")?,
        expand_b: p.var("ffe.expand.b")?,
    };
    wavelet_attention_var(fusion, &wa)
}

/// `conv1x1 -> avg_pool2 -> leaky_relu -> instance_norm`; the norm is
/// skipped once the output is 2x2 or smaller, where it would erase the
/// signal the global pool is about to read.
pub fn color_block<'t, T: Real>(p: &Bound<'_, 't, T>, x: Var<'t, T>, index: usize) -> Result<Var<'t, T>> {
    let y = lrelu(p.conv(x, &format!("cond.block{index}"), 1)?.avg_pool2()?)?;
    let s = y.shape();
    if s[1] * s[2] <= 4 {
        Ok(y)
    } else {
        y.instance_norm(None, None, IN_EPS)
    }
}

/// Clip-level colour prior: per mapping layer `(alpha, beta, gamma)`.
pub fn condition_3dcn<'t, T: Real>(cfg: &NetConfig, p: &Bound<'_, 't, T>, frames: &[Var<'t, T>]) -> Result<PriorVars<'t, T>> {
    check_clip(cfg, frames)?;
    let mut x = Var::concat(frames)?;
    for b in 0..cfg.color_blocks {
        x = color_block(p, x, b)?;
    }
    let v = x.global_avg_pool()?.conv2d(p.var("cond.head.w")?, Some(p.var("cond.head.b")?), 1, Padding::Valid)?;
    let c = cfg.channels;
    let v = v.reshape(&[3 * c * cfg.dmc_layers])?;
    (0..cfg.dmc_layers)
        .map(|l| Ok([v.narrow(3 * c * l, c)?, v.narrow(3 * c * l + c, c)?, v.narrow(3 * c * l + 2 * c, c)?]))
        .collect()
}

fn neutral_prior<'t, T: Real>(tape: &'t Tape<T>, cfg: &NetConfig) -> Result<PriorVars<'t, T>> {
    let c = cfg.channels;
    (0..cfg.dmc_layers)
        .map(|_| {
            Ok([
                tape.constant(Tensor::full(&[c], 1.0)?),
                tape.constant(Tensor::zeros(&[c])?),
                tape.constant(Tensor::full(&[c], 1.0)?),
            ])
        })
        .collect()
}

/// Stack of modulated 1x1 layers.
pub fn dmitm<'t, T: Real>(cfg: &NetConfig, p: &Bound<'_, 't, T>, x: Var<'t, T>, prior: &PriorVars<'t, T>) -> Result<Var<'t, T>> {
    if prior.len() != cfg.dmc_layers {
        return Err(shape_err!("prior has {} layers, network has {}", prior.len(), cfg.dmc_layers));
    }
    let mut x = x;
    for (l, [a, b, g]) in prior.iter().enumerate() {
        let (w, bias) = (p.var(&format!("dmitm.layer{l}.w"))?, p.var(&format!("dmitm.layer{l}.b"))?);
        x = if cfg.use_modulation {
            dmc_var(x, w, bias, *a, *b, *g)?
        } else {
            x.conv2d(w, Some(bias), 1, Padding::Valid)?
        };
        if l + 1 < prior.len() && !cfg.linear_dmitm {
            x = lrelu(x)?;
        }
    }
    Ok(x)
}

/// Full forward pass over a 7-frame SDR clip.
pub fn forward<'t, T: Real>(cfg: &NetConfig, p: &Bound<'_, 't, T>, frames: &[Var<'t, T>]) -> Result<Outputs<'t, T>> {
    let tape = frames.first().ok_or_else(|| Error::Contract("empty clip".into()))?.tape();
    let (fusion, offsets) = tsaf(cfg, p, frames)?;
    let sdr = aux_head(p, fusion)?;
    let fe = ffe(cfg, p, fusion)?;
    let prior = if cfg.use_prior { condition_3dcn(cfg, p, frames)? } else { neutral_prior(tape, cfg)? };
    let mapped = dmitm(cfg, p, fe, &prior)?;
    let mut hdr = p.conv(mapped, "hdr.head", 1)?;
    if cfg.hdr_residual {
        let centre = Frame::clamped(frames[MID].value().cast(), ColorSpace::SdrBt709)?;
        hdr = hdr.add(tape.constant(inverse_tonemap(&centre)?.pixels.cast()))?;
    }
    let sdr = if cfg.sdr_residual { sdr.add(frames[MID])? } else { sdr };
    Ok(Outputs { hdr, sdr, offsets, prior })
}

/// `main * L1(hdr) + aux * L1(sdr)`.
pub fn loss_dual<'t, T: Real>(
    hdr_pred: Var<'t, T>,
    hdr_ref: Var<'t, T>,
    sdr_pred: Var<'t, T>,
    sdr_ref: Var<'t, T>,
    main_weight: f64,
    aux_weight: f64,
) -> Result<Var<'t, T>> {
    let main = hdr_pred.l1_loss(hdr_ref)?.scale(main_weight)?;
    let aux = sdr_pred.l1_loss(sdr_ref)?.scale(aux_weight)?;
    main.add(aux)
}

/// Inference on plain tensors: `(hdr, sdr)` predictions.
pub fn infer<T: Real>(cfg: &NetConfig, params: &Params<T>, frames: &[Tensor<T>]) -> Result<(Tensor<T>, Tensor<T>)> {
    let tape = Tape::new();
    let bound = params.bind(&tape, false);
    let vars: Vec<_> = frames.iter().map(|f| tape.constant(f.clone())).collect();
    let out = forward(cfg, &bound, &vars)?;
    let (h, s) = (out.hdr.value(), out.sdr.value());
    Ok(((*h).clone(), (*s).clone()))
}

#[cfg(test)]
mod tests;
