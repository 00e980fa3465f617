//! SDR/HDR signal model: PQ and BT.709 transfer functions, BT.709/BT.2020
//! gamut conversion, ICtCp/ITP, and the synthetic HDR -> SDR grade.

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// PQ reference peak in cd/m^2.
pub const PQ_PEAK_NITS: f64 = 10000.0;
/// Luminance that SDR code 1.0 (relative 1.0) maps to when placed in an HDR container.
pub const SDR_WHITE_NITS: f64 = 100.0;
/// Reinhard white scale of the synthetic grade.
pub const REINHARD_WHITE_NITS: f64 = 100.0;

const PQ_M1: f64 = 1305.0 / 8192.0;
const PQ_M2: f64 = 2523.0 / 32.0;
const PQ_C1: f64 = 107.0 / 128.0;
const PQ_C2: f64 = 2413.0 / 128.0;
const PQ_C3: f64 = 2392.0 / 128.0;

// Full-precision BT.709/BT.2020 OETF constants; the rounded 1.099/0.018 pair
// leaves a small gap at the knee that breaks invertibility.
const REC_ALPHA: f64 = 1.099_296_826_809_442_9;
const REC_BETA: f64 = 0.018_053_968_510_807_807;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColorSpace {
    /// BT.709 primaries, BT.709 OETF, 100-nit white.
    SdrBt709,
    /// BT.2020 primaries, SMPTE ST 2084 (PQ) signal.
    HdrBt2020Pq,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Ten,
    Float,
}

impl BitDepth {
    pub fn bits(self) -> Option<u32> {
        match self {
            BitDepth::Eight => Some(8),
            BitDepth::Ten => Some(10),
            BitDepth::Float => None,
        }
    }
}

/// A `[3, H, W]` image with code values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub pixels: Tensor<f64>,
    pub space: ColorSpace,
    pub depth: BitDepth,
}

impl Frame {
    pub fn new(pixels: Tensor<f64>, space: ColorSpace, depth: BitDepth) -> Result<Self> {
        let (c, _, _) = pixels.chw()?;
        if c != 3 {
            return Err(shape_err!("frames have 3 channels, got {c}"));
        }
        pixels.ensure_finite("frame")?;
        if let Some(v) = pixels.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("frame code value {v} outside [0, 1]")));
        }
        Ok(Self { pixels, space, depth })
    }

    /// Clamps into `[0, 1]` first; for network outputs.
    pub fn clamped(pixels: Tensor<f64>, space: ColorSpace) -> Result<Self> {
        Self::new(pixels.map(|v| v.clamp(0.0, 1.0)), space, BitDepth::Float)
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    fn expect(&self, space: ColorSpace, op: &str) -> Result<()> {
        if self.space != space {
            return Err(Error::Contract(format!("{op} expects {space:?}, frame is {:?}", self.space)));
        }
        Ok(())
    }

    fn map_pixels(&self, mut f: impl FnMut([f64; 3]) -> [f64; 3]) -> Tensor<f64> {
        let hw = self.height() * self.width();
        let mut out = self.pixels.clone();
        let d = out.data_mut();
        for i in 0..hw {
            let rgb = f([d[i], d[hw + i], d[2 * hw + i]]);
            d[i] = rgb[0];
            d[hw + i] = rgb[1];
            d[2 * hw + i] = rgb[2];
        }
        out
    }
}

/// Absolute luminance (nits) to PQ code.
pub fn pq_oetf(nits: f64, peak: f64) -> Result<f64> {
    if !(nits >= 0.0) {
        return Err(Error::Domain(format!("negative or NaN luminance {nits}")));
    }
    let yp = (nits / peak).powf(PQ_M1);
    Ok(((PQ_C1 + PQ_C2 * yp) / (1.0 + PQ_C3 * yp)).powf(PQ_M2))
}

/// PQ code to absolute luminance (nits).
pub fn pq_eotf(code: f64, peak: f64) -> f64 {
    let ep = code.max(0.0).powf(1.0 / PQ_M2);
    let num = (ep - PQ_C1).max(0.0);
    peak * (num / (PQ_C2 - PQ_C3 * ep)).powf(1.0 / PQ_M1)
}

pub fn pq_oetf_tensor(nits: &Tensor<f64>, peak: f64) -> Result<Tensor<f64>> {
    let data = nits.data().iter().map(|&v| pq_oetf(v, peak)).collect::<Result<Vec<_>>>()?;
    Tensor::from_vec(nits.shape(), data)
}

pub fn pq_eotf_tensor(code: &Tensor<f64>, peak: f64) -> Tensor<f64> {
    code.map(|v| pq_eotf(v, peak))
}

/// BT.709 camera OETF, relative linear light in `[0, 1]` to code.
pub fn bt709_oetf(l: f64) -> f64 {
    let l = l.max(0.0);
    if l < REC_BETA {
        4.5 * l
    } else {
        REC_ALPHA * l.powf(0.45) - (REC_ALPHA - 1.0)
    }
}

/// Exact inverse of [`bt709_oetf`].
pub fn bt709_eotf(v: f64) -> f64 {
    let v = v.max(0.0);
    if v < 4.5 * REC_BETA {
        v / 4.5
    } else {
        ((v + REC_ALPHA - 1.0) / REC_ALPHA).powf(1.0 / 0.45)
    }
}

pub type Mat3 = [[f64; 3]; 3];

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

fn mat_inv(m: &Mat3) -> Mat3 {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    [
        [c(1, 2, 1, 2) / det, -c(0, 2, 1, 2) / det, c(0, 1, 1, 2) / det],
        [-c(1, 2, 0, 2) / det, c(0, 2, 0, 2) / det, -c(0, 1, 0, 2) / det],
        [c(1, 2, 0, 1) / det, -c(0, 2, 0, 1) / det, c(0, 1, 0, 1) / det],
    ]
}

pub fn apply(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

/// Linear RGB -> XYZ for primaries `[(x, y); 3]` and a D65 white.
fn rgb_to_xyz(primaries: [(f64, f64); 3]) -> Mat3 {
    let (wx, wy) = (0.3127, 0.3290);
    let white = [wx / wy, 1.0, (1.0 - wx - wy) / wy];
    let col = |(x, y): (f64, f64)| [x / y, 1.0, (1.0 - x - y) / y];
    let p = primaries.map(col);
    let pm = [[p[0][0], p[1][0], p[2][0]], [p[0][1], p[1][1], p[2][1]], [p[0][2], p[1][2], p[2][2]]];
    let s = apply(&mat_inv(&pm), white);
    let mut m = pm;
    for row in m.iter_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v *= s[j];
        }
    }
    m
}

const BT709_PRIMARIES: [(f64, f64); 3] = [(0.64, 0.33), (0.30, 0.60), (0.15, 0.06)];
const BT2020_PRIMARIES: [(f64, f64); 3] = [(0.708, 0.292), (0.170, 0.797), (0.131, 0.046)];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gamut {
    Bt709ToBt2020,
    Bt2020ToBt709,
}

/// Conversion matrix between linear BT.709 and BT.2020 RGB, derived from the
/// primaries; the two directions are exact inverses.
pub fn gamut_matrix(dir: Gamut) -> Mat3 {
    let to2020 = mat_mul(&mat_inv(&rgb_to_xyz(BT2020_PRIMARIES)), &rgb_to_xyz(BT709_PRIMARIES));
    match dir {
        Gamut::Bt709ToBt2020 => to2020,
        Gamut::Bt2020ToBt709 => mat_inv(&to2020),
    }
}

/// Applies a gamut matrix to a linear-light `[3, H, W]` tensor.
pub fn gamut_convert(rgb_linear: &Tensor<f64>, dir: Gamut) -> Result<Tensor<f64>> {
    let (c, h, w) = rgb_linear.chw()?;
    if c != 3 {
        return Err(shape_err!("gamut conversion needs 3 channels, got {c}"));
    }
    let m = gamut_matrix(dir);
    let hw = h * w;
    let mut out = rgb_linear.clone();
    let src = rgb_linear.data();
    let d = out.data_mut();
    for i in 0..hw {
        let v = apply(&m, [src[i], src[hw + i], src[2 * hw + i]]);
        (d[i], d[hw + i], d[2 * hw + i]) = (v[0], v[1], v[2]);
    }
    Ok(out)
}

const RGB2020_TO_LMS: Mat3 = [
    [1688.0 / 4096.0, 2146.0 / 4096.0, 262.0 / 4096.0],
    [683.0 / 4096.0, 2951.0 / 4096.0, 462.0 / 4096.0],
    [99.0 / 4096.0, 309.0 / 4096.0, 3688.0 / 4096.0],
];
const LMS_TO_ICTCP: Mat3 = [
    [0.5, 0.5, 0.0],
    [6610.0 / 4096.0, -13613.0 / 4096.0, 7003.0 / 4096.0],
    [17933.0 / 4096.0, -17390.0 / 4096.0, -543.0 / 4096.0],
];

/// Linear BT.2020 RGB in nits to `(I, T, P)` where `T = Ct / 2`.
pub fn itp_from_linear2020(rgb_nits: [f64; 3]) -> [f64; 3] {
    let lms = apply(&RGB2020_TO_LMS, rgb_nits);
    let lms_p = lms.map(|v| pq_oetf(v.max(0.0), PQ_PEAK_NITS).expect("non-negative"));
    let ictcp = apply(&LMS_TO_ICTCP, lms_p);
    [ictcp[0], 0.5 * ictcp[1], ictcp[2]]
}

/// Linear-light BT.2020 RGB in nits for every pixel of `frame`.
pub fn linear_bt2020_nits(frame: &Frame) -> Result<Tensor<f64>> {
    match frame.space {
        ColorSpace::HdrBt2020Pq => Ok(pq_eotf_tensor(&frame.pixels, PQ_PEAK_NITS)),
        ColorSpace::SdrBt709 => {
            let lin = frame.pixels.map(|v| bt709_eotf(v) * SDR_WHITE_NITS);
            gamut_convert(&lin, Gamut::Bt709ToBt2020)
        }
    }
}

/// `[3, H, W]` ITP planes of a frame.
pub fn rgb_to_itp(frame: &Frame) -> Result<Tensor<f64>> {
    let lin = linear_bt2020_nits(frame)?;
    let f = Frame { pixels: lin, space: frame.space, depth: BitDepth::Float };
    Ok(f.map_pixels(itp_from_linear2020))
}

/// Synthetic grade: PQ decode, BT.2020 -> BT.709 with a hard clip of negative
/// components, per-channel Reinhard `L / (1 + L / 100)`, BT.709 OETF.
pub fn reference_tonemap(hdr: &Frame) -> Result<Frame> {
    hdr.expect(ColorSpace::HdrBt2020Pq, "reference tone map")?;
    let m = gamut_matrix(Gamut::Bt2020ToBt709);
    let pixels = hdr.map_pixels(|pq| {
        let lin = pq.map(|v| pq_eotf(v, PQ_PEAK_NITS));
        apply(&m, lin).map(|v| {
            let l = v.max(0.0);
            let rel = l / (1.0 + l / REINHARD_WHITE_NITS) / REINHARD_WHITE_NITS;
            bt709_oetf(rel)
        })
    });
    Frame::new(pixels.map(|v| v.clamp(0.0, 1.0)), ColorSpace::SdrBt709, BitDepth::Float)
}

/// Closed-form inverse of [`reference_tonemap`] on its range; the no-learning
/// baseline for SDR -> HDR conversion.
pub fn inverse_tonemap(sdr: &Frame) -> Result<Frame> {
    sdr.expect(ColorSpace::SdrBt709, "inverse tone map")?;
    let m = gamut_matrix(Gamut::Bt709ToBt2020);
    let rel_max = PQ_PEAK_NITS / (REINHARD_WHITE_NITS + PQ_PEAK_NITS);
    let pixels = sdr.map_pixels(|code| {
        let lin709 = code.map(|v| {
            let rel = bt709_eotf(v).min(rel_max);
            REINHARD_WHITE_NITS * rel / (1.0 - rel)
        });
        apply(&m, lin709).map(|v| pq_oetf(v.clamp(0.0, PQ_PEAK_NITS), PQ_PEAK_NITS).expect("clamped"))
    });
    Frame::new(pixels.map(|v| v.clamp(0.0, 1.0)), ColorSpace::HdrBt2020Pq, BitDepth::Float)
}

#[cfg(test)]
mod tests;
