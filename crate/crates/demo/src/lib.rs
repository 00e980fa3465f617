//! Browser bindings: synthesise a scene, show its grade and degradation,
//! split a frame into Haar subbands and evaluate the modulation cost model.
//!
//! The plain functions return RGBA byte buffers so they can be tested
//! natively; the `#[wasm_bindgen]` wrappers only convert errors.

use didnet::color::{inverse_tonemap, reference_tonemap, Frame};
use didnet::degradation::{synth_clip_pair, MID};
use didnet::metrics::{delta_e_itp, psnr};
use didnet::modulation;
use didnet::source::{hdr_clip, SourceOptions};
use didnet::wavelet::dwt2_haar;
use didnet::Tensor;
use wasm_bindgen::prelude::*;

fn rgba(t: &Tensor, map: impl Fn(f64) -> f64) -> Vec<u8> {
    let (_, h, w) = t.chw().expect("frame tensors are [3, H, W]");
    let mut out = Vec::with_capacity(4 * h * w);
    for p in 0..h * w {
        for c in 0..3 {
            out.push((map(t.data()[c * h * w + p]).clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        out.push(255);
    }
    out
}

/// Four `size x size` RGBA images back to back: the PQ-coded HDR source,
/// its SDR grade, the degraded SDR and the inverse-graded degraded frame.
pub fn scene_views(seed: u64, size: usize, qp: u32) -> didnet::Result<Vec<u8>> {
    let clip = hdr_clip(SourceOptions::new(size, size), seed)?;
    let pair = synth_clip_pair(&clip, qp, seed)?;
    let baseline = inverse_tonemap(&pair.lq_sdr[MID])?;
    let mut out = Vec::with_capacity(16 * size * size);
    for f in [&pair.hq_hdr_mid, &pair.hq_sdr_mid, &pair.lq_sdr[MID], &baseline] {
        out.extend(rgba(&f.pixels, |v| v));
    }
    Ok(out)
}

/// `[psnr(lq, hq) SDR, psnr(baseline, hq) HDR, dE_ITP(baseline, hq)]`.
pub fn scene_scores(seed: u64, size: usize, qp: u32) -> didnet::Result<Vec<f64>> {
    let clip = hdr_clip(SourceOptions::new(size, size), seed)?;
    let pair = synth_clip_pair(&clip, qp, seed)?;
    let baseline = inverse_tonemap(&pair.lq_sdr[MID])?;
    Ok(vec![
        psnr(&pair.lq_sdr[MID], &pair.hq_sdr_mid, 1.0)?,
        psnr(&baseline, &pair.hq_hdr_mid, 1.0)?,
        delta_e_itp(&baseline, &pair.hq_hdr_mid)?,
    ])
}

/// `size x size` mosaic of the SDR grade's subbands: LL top left, LH top
/// right, HL bottom left, HH bottom right. Detail bands are shown around
/// mid grey with `gain`.
pub fn subband_mosaic(seed: u64, size: usize, gain: f64) -> didnet::Result<Vec<u8>> {
    let clip = hdr_clip(SourceOptions::new(size, size), seed)?;
    let sdr: Frame = reference_tonemap(&clip[MID])?;
    let co = dwt2_haar(&sdr.pixels)?;
    let half = size / 2;
    let mut out = vec![0u8; 4 * size * size];
    let tiles = [(&co.ll, 0, 0, true), (&co.lh, 0, half, false), (&co.hl, half, 0, false), (&co.hh, half, half, false)];
    for (band, oy, ox, low) in tiles {
        let img = rgba(band, |v| if low { v / 2.0 } else { 0.5 + gain * v });
        for y in 0..half {
            let src = &img[4 * y * half..4 * (y + 1) * half];
            let dst = 4 * ((oy + y) * size + ox);
            out[dst..dst + 4 * half].copy_from_slice(src);
        }
    }
    Ok(out)
}

fn js(e: didnet::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[wasm_bindgen(js_name = sceneViews)]
pub fn scene_views_js(seed: u32, size: u32, qp: u32) -> Result<Vec<u8>, JsValue> {
    scene_views(seed.into(), size as usize, qp).map_err(js)
}

#[wasm_bindgen(js_name = sceneScores)]
pub fn scene_scores_js(seed: u32, size: u32, qp: u32) -> Result<Vec<f64>, JsValue> {
    scene_scores(seed.into(), size as usize, qp).map_err(js)
}

#[wasm_bindgen(js_name = subbandMosaic)]
pub fn subband_mosaic_js(seed: u32, size: u32, gain: f64) -> Result<Vec<u8>, JsValue> {
    subband_mosaic(seed.into(), size as usize, gain).map_err(js)
}

/// `[feature-wise multiplies, folded multiplies]` for an `h x w` output
/// with `m` input and `n` output channels.
#[wasm_bindgen(js_name = modulationCost)]
pub fn modulation_cost(h: f64, w: f64, m: f64, n: f64) -> Vec<f64> {
    let (a, b) = modulation::modulation_cost(h as u64, w as u64, m as u64, n as u64);
    vec![a as f64, b as f64]
}
