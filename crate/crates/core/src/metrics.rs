//! Full-reference quality metrics and report formatting.

use std::fmt::Write as _;

use crate::color::{rgb_to_itp, Frame};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Reported PSNR when the two signals are identical.
pub const PSNR_CAP_DB: f64 = 99.0;

const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
/// Smallest side that survives four halvings with an 11-tap window left over.
pub const MS_SSIM_MIN_SIDE: usize = 176;
pub const DELTA_E_SCALE: f64 = 720.0;

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
}

fn same_shape(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err!("metric inputs differ in shape: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

pub fn mse(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    same_shape(a, b)?;
    let se: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(se / a.len() as f64)
}

pub fn psnr(a: &Frame, b: &Frame, peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(&a.pixels, &b.pixels)?, peak))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WIN / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WIN).map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of an `h x w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = g.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            rows[y * ow + ox] = (0..k).map(|t| g[t] * x[y * w + ox + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = (0..k).map(|t| g[t] * rows[(oy + t) * ow + ox]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM and mean contrast-structure term of one plane pair.
fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, g: &[f64]) -> (f64, f64) {
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let prod = |f: fn(f64, f64) -> f64| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
    let (mu_a, _, _) = filter_valid(a, h, w, g);
    let (mu_b, _, _) = filter_valid(b, h, w, g);
    let (e_aa, _, _) = filter_valid(&prod(|x, _| x * x), h, w, g);
    let (e_bb, _, _) = filter_valid(&prod(|_, y| y * y), h, w, g);
    let (e_ab, _, _) = filter_valid(&prod(|x, y| x * y), h, w, g);
    let n = mu_a.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let cs_i = (2.0 * cov + c2) / (va + vb + c2);
        cs += cs_i;
        ssim += (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1) * cs_i;
    }
    (ssim / n, cs / n)
}

fn planes(a: &Frame, b: &Frame, min_side: usize, what: &str) -> Result<(usize, usize, usize)> {
    same_shape(&a.pixels, &b.pixels)?;
    let (c, h, w) = a.pixels.chw()?;
    if h.min(w) < min_side {
        return Err(Error::Contract(format!("{what} needs both sides >= {min_side}, got {h}x{w}")));
    }
    Ok((c, h, w))
}

/// Gaussian-window SSIM, per channel then averaged.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    let (c, h, w) = planes(a, b, SSIM_WIN, "SSIM")?;
    let g = gaussian_window();
    let total: f64 = (0..c).map(|ch| ssim_plane(a.pixels.plane(ch), b.pixels.plane(ch), h, w, &g).0).sum();
    Ok(total / c as f64)
}

fn halve(x: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x2 in 0..ow {
            let i = 2 * y * w + 2 * x2;
            out[y * ow + x2] = 0.25 * (x[i] + x[i + 1] + x[i + w] + x[i + w + 1]);
        }
    }
    (out, oh, ow)
}

/// Five-scale MS-SSIM, per channel then averaged. Negative contrast-structure
/// terms are clamped to zero before exponentiation.
pub fn ms_ssim(a: &Frame, b: &Frame) -> Result<f64> {
    let (c, h0, w0) = planes(a, b, MS_SSIM_MIN_SIDE, "MS-SSIM")?;
    let g = gaussian_window();
    let mut total = 0.0;
    for ch in 0..c {
        let (mut pa, mut pb) = (a.pixels.plane(ch).to_vec(), b.pixels.plane(ch).to_vec());
        let (mut h, mut w) = (h0, w0);
        let mut acc = 1.0;
        for (s, wt) in MS_SSIM_WEIGHTS.iter().enumerate() {
            let (ss, cs) = ssim_plane(&pa, &pb, h, w, &g);
            let term = if s + 1 == MS_SSIM_WEIGHTS.len() { ss } else { cs };
            acc *= term.max(0.0).powf(*wt);
            if s + 1 < MS_SSIM_WEIGHTS.len() {
                let (na, nh, nw) = halve(&pa, h, w);
                pb = halve(&pb, h, w).0;
                (pa, h, w) = (na, nh, nw);
            }
        }
        total += acc;
    }
    Ok(total / c as f64)
}

/// Mean per-pixel `720 * |ITP(a) - ITP(b)|`.
pub fn delta_e_itp(a: &Frame, b: &Frame) -> Result<f64> {
    if a.space != b.space {
        return Err(Error::Contract(format!("delta E between {:?} and {:?}", a.space, b.space)));
    }
    same_shape(&a.pixels, &b.pixels)?;
    let (ia, ib) = (rgb_to_itp(a)?, rgb_to_itp(b)?);
    let hw = a.height() * a.width();
    let (da, db) = (ia.data(), ib.data());
    let sum: f64 = (0..hw)
        .map(|i| {
            let d = |c: usize| da[c * hw + i] - db[c * hw + i];
            DELTA_E_SCALE * (d(0).powi(2) + d(1).powi(2) + d(2).powi(2)).sqrt()
        })
        .sum();
    Ok(sum / hw as f64)
}

/// Population standard deviation of a sequence.
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Standard deviation across frames of the per-frame delta E.
pub fn temporal_std_delta_e(pred: &[Frame], reference: &[Frame]) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(shape_err!("clip lengths differ: {} vs {}", pred.len(), reference.len()));
    }
    let per_frame = pred.iter().zip(reference).map(|(p, r)| delta_e_itp(p, r)).collect::<Result<Vec<_>>>()?;
    Ok(population_std(&per_frame))
}

/// Per-frame values of several metrics for one clip.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub clip_id: String,
    pub qp_label: u32,
    pub metrics: Vec<(String, Vec<f64>)>,
}

impl MetricReport {
    pub fn new(clip_id: impl Into<String>, qp_label: u32) -> Self {
        Self { clip_id: clip_id.into(), qp_label, metrics: Vec::new() }
    }

    pub fn push(&mut self, metric: &str, value: f64) {
        match self.metrics.iter_mut().find(|(m, _)| m == metric) {
            Some((_, v)) => v.push(value),
            None => self.metrics.push((metric.to_string(), vec![value])),
        }
    }

    pub fn values(&self, metric: &str) -> Option<&[f64]> {
        self.metrics.iter().find(|(m, _)| m == metric).map(|(_, v)| v.as_slice())
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.values(metric).filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// `clip,frame,metric,value` rows, in report order.
pub fn reports_to_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from("clip,frame,metric,value\n");
    for r in reports {
        for (metric, values) in &r.metrics {
            for (i, v) in values.iter().enumerate() {
                writeln!(out, "{},{},{},{:.6}", r.clip_id, i, metric, v).unwrap();
            }
        }
    }
    out
}

/// One row per QP label with the mean of each metric over all clips.
pub fn reports_to_markdown(reports: &[MetricReport]) -> String {
    let mut names: Vec<&str> = Vec::new();
    let mut qps: Vec<u32> = Vec::new();
    for r in reports {
        for (m, _) in &r.metrics {
            if !names.contains(&m.as_str()) {
                names.push(m);
            }
        }
        if !qps.contains(&r.qp_label) {
            qps.push(r.qp_label);
        }
    }
    qps.sort_unstable();
    let mut out = String::from("| QP |");
    for n in &names {
        write!(out, " {n} |").unwrap();
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(names.len()));
    out.push('\n');
    for qp in qps {
        write!(out, "| {qp} |").unwrap();
        for n in &names {
            let means: Vec<f64> =
                reports.iter().filter(|r| r.qp_label == qp).filter_map(|r| r.mean(n)).collect();
            if means.is_empty() {
                out.push_str(" - |");
            } else {
                write!(out, " {:.4} |", means.iter().sum::<f64>() / means.len() as f64).unwrap();
            }
        }
        out.push('\n');
    }
    out
}
