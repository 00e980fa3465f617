use didnet::color::{reference_tonemap, BitDepth, ColorSpace, Frame};
use didnet::degradation::{synth_clip_pair, ClipPair};
use didnet::net::{self, Adam, Dataset, NetConfig, Params, TrainConfig};
use didnet::source::{corpus, hdr_clip, SourceOptions};
use didnet::{Tape, Tensor};

fn small() -> NetConfig {
    let mut c = NetConfig::tiny();
    for (k, v) in [("channels", "4"), ("res_blocks", "1"), ("color_blocks", "3"), ("cond_channels", "4"), ("align_channels", "2"), ("offset_channels", "4")] {
        c.set(k, v).unwrap();
    }
    c
}

#[test]
fn single_clip_overfits() {
    let clip = corpus(SourceOptions::new(64, 64), 37, 3..4).unwrap();
    let tc = TrainConfig { steps: 2000, augment: false, ..TrainConfig::default() };
    let out = net::train::<f32>(&NetConfig::tiny(), &tc, &Dataset { clips: clip }, None, |_, _| Ok(())).unwrap();
    let tail: f64 = out.log[1950..].iter().map(|r| r.loss).sum::<f64>() / 50.0;
    let head: f64 = out.log[..50].iter().map(|r| r.loss).sum::<f64>() / 50.0;
    assert!(tail < 0.01, "final loss {tail}");
    assert!(tail < head);
}

#[test]
fn training_is_deterministic() {
    let clips = corpus(SourceOptions::new(16, 16), 37, 0..2).unwrap();
    let tc = TrainConfig { steps: 5, ..TrainConfig::default() };
    let run = || net::train::<f32>(&small(), &tc, &Dataset { clips: clips.clone() }, None, |_, _| Ok(())).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.params, b.params);
    assert_eq!(a.log, b.log);
}

#[test]
fn checkpoints_round_trip_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let clips = corpus(SourceOptions::new(16, 16), 32, 0..1).unwrap();
    let tc = TrainConfig { steps: 4, checkpoint_every: 2, ..TrainConfig::default() };
    let mut saved = Vec::new();
    let out = net::train::<f32>(&small(), &tc, &Dataset { clips }, None, |step, p| {
        saved.push(step);
        net::save_checkpoint(&dir.path().join(format!("s{step}")), &small(), p)
    })
    .unwrap();
    assert_eq!(saved, [2, 4]);
    let (cfg, params): (NetConfig, Params<f32>) = net::load_checkpoint(&dir.path().join("s4")).unwrap();
    assert_eq!(cfg, small());
    assert_eq!(params, out.params);
}

/// 160x160 source, two 128x128 crops 16 px apart: away from the borders the
/// outputs must agree once every global-pooling path is input independent.
#[test]
fn forward_is_translation_equivariant_in_the_interior() {
    let cfg = NetConfig::tiny();
    let mut p = net::init_params::<f64>(&cfg, 21).unwrap();
    for (name, scale, seed) in [("tsaf.off.head.w", 0.02, 1), ("tsaf.off.head.b", 0.5, 2)] {
        let t = p.get_mut(name).unwrap();
        *t = Tensor::uniform(t.shape(), -scale, scale, seed).unwrap();
    }
    let gate = p.get_mut("ffe.gate.w").unwrap();
    *gate = Tensor::zeros(gate.shape()).unwrap();

    let big: Vec<Tensor> = hdr_clip(SourceOptions::new(160, 160), 4)
        .unwrap()
        .iter()
        .map(|f| reference_tonemap(f).unwrap().pixels)
        .collect();
    let crop = |t: &Tensor, o: usize| {
        let mut d = Vec::with_capacity(3 * 128 * 128);
        for c in 0..3 {
            for y in 0..128 {
                d.extend_from_slice(&t.data()[(c * 160 + y + o) * 160 + o..][..128]);
            }
        }
        Tensor::from_vec(&[3, 128, 128], d).unwrap()
    };
    let a: Vec<Tensor> = big.iter().map(|t| crop(t, 0)).collect();
    let b: Vec<Tensor> = big.iter().map(|t| crop(t, 16)).collect();
    let (ha, sa) = net::infer(&cfg, &p, &a).unwrap();
    let (hb, sb) = net::infer(&cfg, &p, &b).unwrap();
    let margin = 40;
    let mut worst = 0.0f64;
    for (x, y) in [(&ha, &hb), (&sa, &sb)] {
        for c in 0..3 {
            for r in margin..128 - margin - 16 {
                for q in margin..128 - margin - 16 {
                    let va = x.data()[(c * 128 + r + 16) * 128 + q + 16];
                    let vb = y.data()[(c * 128 + r) * 128 + q];
                    worst = worst.max((va - vb).abs());
                }
            }
        }
    }
    assert!(worst <= 1e-6, "interior mismatch {worst}");
}

/// Offsets trained to warp each neighbour onto the centre frame point in
/// the direction of the injected motion.
#[test]
fn offsets_learn_the_sign_of_a_global_shift() {
    let (h, w) = (32usize, 32usize);
    let base = |y: f64, x: f64| 0.5 + 0.25 * (0.31 * x + 0.17 * y).sin() + 0.2 * (0.23 * x - 0.29 * y + 1.0).cos();
    // Frame t shows the scene moved right by (t - 3) pixels.
    let frames: Vec<Tensor<f32>> = (0..7)
        .map(|t| {
            let s = t as f64 - 3.0;
            let mut d = Vec::with_capacity(3 * h * w);
            for c in 0..3 {
                for y in 0..h {
                    for x in 0..w {
                        d.push((base(y as f64, x as f64 - s) * (1.0 - 0.1 * c as f64)) as f32);
                    }
                }
            }
            Tensor::from_vec(&[3, h, w], d).unwrap()
        })
        .collect();
    let cfg = small();
    let full = net::init_params::<f32>(&cfg, 5).unwrap();
    let mut p = Params::default();
    for (name, t) in full.iter().filter(|(n, _)| n.starts_with("tsaf.off.")) {
        p.insert(name, t.clone());
    }
    let mut ident = Tensor::<f32>::zeros(&[3, 3, 3, 3]).unwrap();
    for c in 0..3 {
        ident.data_mut()[(c * 3 + c) * 9 + 4] = 1.0;
    }
    let mut adam = Adam::new(&p, 0.9, 0.999, 1e-8).unwrap();
    let mut tape = Tape::<f32>::new();
    let mut centre_dx = vec![0.0f64; 6];
    for step in 0..300 {
        let grads = {
            let bound = p.bind(&tape, true);
            let vars: Vec<_> = frames.iter().map(|f| tape.constant(f.clone())).collect();
            let off = net::offset_predictor(&bound, didnet::Var::concat(&vars).unwrap()).unwrap();
            let target = vars[3].narrow(0, 3).unwrap();
            let mut loss = None;
            for (k, t) in [0, 1, 2, 4, 5, 6].into_iter().enumerate() {
                let o = off.narrow(k * 18, 18).unwrap();
                let warped = vars[t].deform_conv2d(tape.constant(ident.clone()), None, o).unwrap();
                let l = warped.l1_loss(target).unwrap();
                loss = Some(match loss {
                    None => l,
                    Some(acc) => l.add(acc).unwrap(),
                });
                if step == 299 {
                    let v = o.value();
                    centre_dx[k] = v.plane(9).iter().map(|&d| d as f64).sum::<f64>() / (h * w) as f64;
                }
            }
            tape.backward(loss.unwrap()).unwrap();
            bound.iter().map(|(_, v)| v.grad()).collect::<Vec<_>>()
        };
        tape.clear();
        adam.step(&mut p, &grads, 2e-3).unwrap();
    }
    for (k, t) in [0, 1, 2, 4, 5, 6].into_iter().enumerate() {
        let want = t as f64 - 3.0;
        assert!(centre_dx[k] * want > 0.0, "frame {t}: mean dx {} (motion {want})", centre_dx[k]);
    }
}

#[test]
fn untrained_outputs_are_finite_over_a_corpus() {
    let cfg = small();
    let p = net::init_params::<f32>(&cfg, 8).unwrap();
    let clips: Vec<ClipPair> = (0..4).map(|s| synth_clip_pair(&hdr_clip(SourceOptions::new(16, 16), s).unwrap(), 42, s).unwrap()).collect();
    let summary = net::evaluate(&cfg, &p, &clips).unwrap();
    assert!(summary.psnr_hdr.is_finite() && summary.delta_e.is_finite());
    let frames: Vec<Frame> = clips[0].lq_sdr.clone();
    let out = net::temporal_outputs(&cfg, &p, &frames).unwrap();
    assert_eq!(out.len(), 7);
    assert!(out.iter().all(|f| f.space == ColorSpace::HdrBt2020Pq && f.depth == BitDepth::Float));
}
