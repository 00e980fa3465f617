//! Procedural HDR source clips: drifting gradients, soft shapes with bright
//! highlights and striped texture, BT.709-gamut content in a 10-bit PQ
//! BT.2020 container.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::color::{apply, gamut_matrix, pq_oetf, BitDepth, ColorSpace, Frame, Gamut, PQ_PEAK_NITS};
use crate::degradation::{quantize, synth_clip_pair, ClipPair, CLIP_LEN};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
struct Shape {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    color: [f64; 3],
}

#[derive(Clone, Debug)]
struct Scene {
    corner: [[f64; 3]; 2],
    angle: f64,
    shapes: Vec<Shape>,
    stripe_color: [f64; 3],
    stripe_freq: f64,
    stripe_angle: f64,
    velocity: (f64, f64),
    noise: f64,
}

fn color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    let lum = lo * (hi / lo).powf(rng.gen::<f64>());
    let mut c = [0.0; 3];
    c.iter_mut().for_each(|v| *v = rng.gen_range(0.15..1.0));
    let m = c.iter().cloned().fold(0.0, f64::max);
    c.map(|v| v / m * lum)
}

impl Scene {
    fn random(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Self {
        let size = h.min(w) as f64;
        let shapes = (0..rng.gen_range(2..=4))
            .map(|i| Shape {
                cy: rng.gen_range(0.0..h as f64),
                cx: rng.gen_range(0.0..w as f64),
                ry: rng.gen_range(0.1..0.3) * size,
                rx: rng.gen_range(0.1..0.3) * size,
                color: if i == 0 { color(rng, 400.0, 3000.0) } else { color(rng, 5.0, 300.0) },
            })
            .collect();
        let speed = rng.gen_range(0.5..2.0);
        let dir = rng.gen_range(0.0..std::f64::consts::TAU);
        Self {
            corner: [color(rng, 1.0, 60.0), color(rng, 5.0, 200.0)],
            angle: rng.gen_range(0.0..std::f64::consts::TAU),
            shapes,
            stripe_color: color(rng, 10.0, 150.0),
            stripe_freq: rng.gen_range(0.15..0.6),
            stripe_angle: rng.gen_range(0.0..std::f64::consts::PI),
            velocity: (speed * dir.sin(), speed * dir.cos()),
            noise: 0.0,
        }
    }

    /// Linear BT.709 light in nits at scene position `(y, x)`.
    fn radiance(&self, y: f64, x: f64, size: f64) -> [f64; 3] {
        let t = ((x * self.angle.cos() + y * self.angle.sin()) / size).rem_euclid(2.0);
        let t = if t > 1.0 { 2.0 - t } else { t };
        let mut c = [0.0; 3];
        for (k, v) in c.iter_mut().enumerate() {
            *v = self.corner[0][k] * (1.0 - t) + self.corner[1][k] * t;
        }
        let phase = (x * self.stripe_angle.cos() + y * self.stripe_angle.sin()) * self.stripe_freq;
        let stripe = 0.5 + 0.5 * phase.sin();
        let band = (0.5 + 0.5 * (y / size * 3.0).sin()).powi(4);
        for (k, v) in c.iter_mut().enumerate() {
            *v += self.stripe_color[k] * stripe * band;
        }
        for s in &self.shapes {
            let d = ((y - s.cy) / s.ry).powi(2) + ((x - s.cx) / s.rx).powi(2);
            let a = 1.0 / (1.0 + (8.0 * (d - 1.0)).exp());
            for (k, v) in c.iter_mut().enumerate() {
                *v = *v * (1.0 - a) + s.color[k] * a;
            }
        }
        c
    }
}

/// Options for [`hdr_clip`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SourceOptions {
    pub height: usize,
    pub width: usize,
    /// Scene motion on/off; static clips still get per-frame sensor noise.
    pub moving: bool,
    /// Relative per-frame noise amplitude.
    pub noise: f64,
}

impl SourceOptions {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, moving: true, noise: 0.0 }
    }
}

/// Seven 10-bit PQ frames of one procedural scene.
pub fn hdr_clip(opts: SourceOptions, seed: u64) -> Result<Vec<Frame>> {
    let (h, w) = (opts.height, opts.width);
    if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
        return Err(shape_err!("source frames need sides that are positive multiples of 8, got {h}x{w}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = Scene::random(&mut rng, h, w);
    scene.noise = opts.noise;
    let to2020 = gamut_matrix(Gamut::Bt709ToBt2020);
    let size = h.min(w) as f64;
    (0..CLIP_LEN)
        .map(|t| {
            let dt = t as f64 - (CLIP_LEN / 2) as f64;
            let (oy, ox) = if opts.moving { (scene.velocity.0 * dt, scene.velocity.1 * dt) } else { (0.0, 0.0) };
            let mut data = vec![0.0; 3 * h * w];
            for y in 0..h {
                for x in 0..w {
                    let mut lin = scene.radiance(y as f64 + oy, x as f64 + ox, size);
                    if scene.noise > 0.0 {
                        let n = 1.0 + scene.noise * rng.gen_range(-1.0..1.0);
                        lin = lin.map(|v| v * n);
                    }
                    let rgb = apply(&to2020, lin);
                    for c in 0..3 {
                        data[c * h * w + y * w + x] = pq_oetf(rgb[c].clamp(0.0, PQ_PEAK_NITS), PQ_PEAK_NITS)?;
                    }
                }
            }
            let f = Frame::new(Tensor::from_vec(&[3, h, w], data)?, ColorSpace::HdrBt2020Pq, BitDepth::Float)?;
            quantize(&f, 10)
        })
        .collect()
}

/// Degraded training pairs for scene seeds `seeds`, one clip per seed.
pub fn corpus(opts: SourceOptions, qp: u32, seeds: std::ops::Range<u64>) -> Result<Vec<ClipPair>> {
    seeds.map(|s| synth_clip_pair(&hdr_clip(opts, s)?, qp, s)).collect()
}

/// Scene seeds of held-out clips start here.
pub const TEST_SEED_OFFSET: u64 = 1000;
