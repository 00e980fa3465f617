//! Synthetic dual degradation: 8-bit quantisation followed by an 8x8
//! block-DCT quantiser standing in for a video codec.

use std::f64::consts::PI;

use crate::color::{reference_tonemap, BitDepth, ColorSpace, Frame};
use crate::error::{shape_err, Error, Result};

pub const CLIP_LEN: usize = 7;
pub const MID: usize = CLIP_LEN / 2;
pub const QP_LABELS: [u32; 4] = [27, 32, 37, 42];
const BLOCK: usize = 8;

pub fn quantize(x: &Frame, bits: u32) -> Result<Frame> {
    let depth = match bits {
        8 => BitDepth::Eight,
        10 => BitDepth::Ten,
        _ => return Err(Error::Contract(format!("quantize supports 8 or 10 bits, got {bits}"))),
    };
    let levels = ((1u32 << bits) - 1) as f64;
    Frame::new(x.pixels.map(|v| (v * levels).round() / levels), x.space, depth)
}

/// Quantiser step of a QP label, in code units.
pub fn qp_step(qp: u32) -> Result<f64> {
    match QP_LABELS.iter().position(|&q| q == qp) {
        Some(i) => Ok((4u32 << i) as f64 / 255.0),
        None => Err(Error::Contract(format!("QP label must be one of {QP_LABELS:?}, got {qp}"))),
    }
}

fn dct_basis() -> [[f64; BLOCK]; BLOCK] {
    let mut c = [[0.0; BLOCK]; BLOCK];
    for (k, row) in c.iter_mut().enumerate() {
        let s = if k == 0 { (1.0 / BLOCK as f64).sqrt() } else { (2.0 / BLOCK as f64).sqrt() };
        for (n, v) in row.iter_mut().enumerate() {
            *v = s * (PI * (2 * n + 1) as f64 * k as f64 / (2 * BLOCK) as f64).cos();
        }
    }
    c
}

type Block = [[f64; BLOCK]; BLOCK];

/// `C X C^T` (forward) or `C^T X C` (inverse).
fn transform(c: &Block, x: &Block, inverse: bool) -> Block {
    let at = |i: usize, j: usize| if inverse { c[j][i] } else { c[i][j] };
    let mut tmp = [[0.0; BLOCK]; BLOCK];
    for i in 0..BLOCK {
        for j in 0..BLOCK {
            tmp[i][j] = (0..BLOCK).map(|k| at(i, k) * x[k][j]).sum();
        }
    }
    let mut out = [[0.0; BLOCK]; BLOCK];
    for i in 0..BLOCK {
        for j in 0..BLOCK {
            out[i][j] = (0..BLOCK).map(|k| tmp[i][k] * at(j, k)).sum();
        }
    }
    out
}

/// Block-DCT quantisation with a flat table of the given step.
pub fn codec_artifact_sim_with_step(x: &Frame, step: f64) -> Result<Frame> {
    if x.space != ColorSpace::SdrBt709 {
        return Err(Error::Contract("codec simulation runs on SDR frames".into()));
    }
    if !(step > 0.0) {
        return Err(Error::Domain(format!("quantiser step must be positive, got {step}")));
    }
    let (c, h, w) = x.pixels.chw()?;
    if h % BLOCK != 0 || w % BLOCK != 0 {
        return Err(shape_err!("codec simulation needs sides that are multiples of {BLOCK}, got {h}x{w}"));
    }
    let basis = dct_basis();
    let mut out = x.pixels.clone();
    for ch in 0..c {
        let plane = out.plane_mut(ch);
        for by in (0..h).step_by(BLOCK) {
            for bx in (0..w).step_by(BLOCK) {
                let mut blk = [[0.0; BLOCK]; BLOCK];
                for (i, row) in blk.iter_mut().enumerate() {
                    row.copy_from_slice(&plane[(by + i) * w + bx..(by + i) * w + bx + BLOCK]);
                }
                let mut coef = transform(&basis, &blk, false);
                coef.iter_mut().flatten().for_each(|v| *v = (*v / step).round() * step);
                let rec = transform(&basis, &coef, true);
                for (i, row) in rec.iter().enumerate() {
                    for (j, v) in row.iter().enumerate() {
                        plane[(by + i) * w + bx + j] = v.clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    Frame::new(out, x.space, BitDepth::Float)
}

pub fn codec_artifact_sim(x: &Frame, qp: u32) -> Result<Frame> {
    codec_artifact_sim_with_step(x, qp_step(qp)?)
}

/// One training or evaluation sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipPair {
    pub lq_sdr: Vec<Frame>,
    pub hq_sdr_mid: Frame,
    pub hq_hdr_mid: Frame,
    pub qp_label: u32,
    pub seed: u64,
}

impl ClipPair {
    pub fn new(lq_sdr: Vec<Frame>, hq_sdr_mid: Frame, hq_hdr_mid: Frame, qp_label: u32, seed: u64) -> Result<Self> {
        if lq_sdr.len() != CLIP_LEN {
            return Err(Error::Contract(format!("a clip has {CLIP_LEN} frames, got {}", lq_sdr.len())));
        }
        let shape = hq_hdr_mid.pixels.shape();
        if lq_sdr.iter().chain([&hq_sdr_mid]).any(|f| f.pixels.shape() != shape) {
            return Err(shape_err!("clip frames must share one size"));
        }
        Ok(Self { lq_sdr, hq_sdr_mid, hq_hdr_mid, qp_label, seed })
    }

    pub fn height(&self) -> usize {
        self.hq_hdr_mid.height()
    }

    pub fn width(&self) -> usize {
        self.hq_hdr_mid.width()
    }
}

/// Grade each HDR frame to SDR, quantise to 8 bits and run the codec
/// stand-in, whose output is again stored at 8 bits. The result depends only on the inputs; `seed` is carried along
/// for bookkeeping.
pub fn synth_clip_pair(hdr_frames: &[Frame], qp: u32, seed: u64) -> Result<ClipPair> {
    if hdr_frames.len() != CLIP_LEN {
        return Err(Error::Contract(format!("a clip has {CLIP_LEN} frames, got {}", hdr_frames.len())));
    }
    let step = qp_step(qp)?;
    let mut hq_sdr = hdr_frames.iter().map(reference_tonemap).collect::<Result<Vec<_>>>()?;
    let lq = hq_sdr
        .iter()
        .map(|f| quantize(&codec_artifact_sim_with_step(&quantize(f, 8)?, step)?, 8))
        .collect::<Result<Vec<_>>>()?;
    let hq_sdr_mid = hq_sdr.swap_remove(MID);
    ClipPair::new(lq, hq_sdr_mid, hdr_frames[MID].clone(), qp, seed)
}

#[cfg(test)]
mod tests;
