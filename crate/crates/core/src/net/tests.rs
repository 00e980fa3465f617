use super::*;
use crate::tensor::grad_check_at;

fn small() -> NetConfig {
    NetConfig { channels: 4, res_blocks: 1, dmc_layers: 2, color_blocks: 3, cond_channels: 4, align_channels: 2, offset_channels: 4, ..NetConfig::tiny() }
}

fn clip(h: usize, w: usize, seed: u64) -> Vec<Tensor<f64>> {
    (0..CLIP_LEN as u64).map(|i| Tensor::uniform(&[3, h, w], 0.0, 1.0, seed * 10 + i).unwrap()).collect()
}

fn outputs(cfg: &NetConfig, p: &Params<f64>, frames: &[Tensor<f64>]) -> (Tensor<f64>, Tensor<f64>) {
    infer(cfg, p, frames).unwrap()
}

fn randomise(p: &mut Params<f64>, name: &str, scale: f64, seed: u64) {
    let t = p.get_mut(name).unwrap();
    *t = Tensor::uniform(t.shape(), -scale, scale, seed).unwrap();
}

#[test]
fn tiny_preset_size() {
    let p = init_params::<f32>(&NetConfig::tiny(), 0).unwrap();
    assert!(p.count() <= 600_000, "{}", p.count());
    assert!(init_params::<f32>(&NetConfig::standard(), 0).unwrap().count() > p.count());
}

#[test]
fn init_is_seeded() {
    let a = init_params::<f64>(&small(), 3).unwrap();
    assert_eq!(a, init_params::<f64>(&small(), 3).unwrap());
    assert_ne!(a, init_params::<f64>(&small(), 4).unwrap());
}

#[test]
fn color_blocks_halve_and_skip_norm_at_the_bottom() {
    let cfg = NetConfig::tiny();
    let p = init_params::<f64>(&cfg, 1).unwrap();
    let tape = Tape::new();
    let b = p.bind(&tape, false);
    let x = tape.constant(Tensor::uniform(&[21, 8, 8], 0.0, 1.0, 1).unwrap());
    assert_eq!(color_block(&b, x, 0).unwrap().shape(), vec![16, 4, 4]);
    let mut x = tape.constant(Tensor::uniform(&[21, 64, 64], 0.0, 1.0, 2).unwrap());
    for i in 0..6 {
        x = color_block(&b, x, i).unwrap();
    }
    assert_eq!(x.shape(), vec![16, 1, 1]);
    let flat = tape.constant(Tensor::full(&[21, 64, 64], 0.5).unwrap());
    let mut y = flat;
    for i in 0..6 {
        y = color_block(&b, y, i).unwrap();
    }
    assert!(y.value().is_finite());
}

#[test]
fn fresh_prior_is_neutral() {
    let cfg = NetConfig::tiny();
    let p = init_params::<f64>(&cfg, 1).unwrap();
    let tape = Tape::new();
    let b = p.bind(&tape, false);
    let frames: Vec<_> = clip(64, 64, 1).into_iter().map(|f| tape.constant(f)).collect();
    let prior = condition_3dcn(&cfg, &b, &frames).unwrap();
    assert_eq!(prior.len(), cfg.dmc_layers);
    for [a, be, g] in &prior {
        assert!(a.value().data().iter().all(|&v| v == 1.0));
        assert!(be.value().data().iter().all(|&v| v == 0.0));
        assert!(g.value().data().iter().all(|&v| v == 1.0));
    }
    assert!(matches!(condition_3dcn(&cfg, &b, &frames[..6]), Err(Error::Contract(_))));
}

#[test]
fn prior_depends_on_tone_and_frame_order() {
    let cfg = small();
    let mut p = init_params::<f64>(&cfg, 2).unwrap();
    randomise(&mut p, "cond.head.w", 0.5, 9);
    for b in 0..cfg.color_blocks {
        randomise(&mut p, &format!("cond.block{b}.b"), 0.5, 20 + b as u64);
    }
    let prior_alpha = |frames: &[Tensor<f64>]| {
        let tape = Tape::new();
        let b = p.bind(&tape, false);
        let vars: Vec<_> = frames.iter().map(|f| tape.constant(f.clone())).collect();
        let prior = condition_3dcn(&cfg, &b, &vars).unwrap();
        let v = prior[0][0].value();
        (*v).clone()
    };
    let frames = clip(16, 16, 3);
    let darker: Vec<_> = frames.iter().map(|f| f.scaled(0.5)).collect();
    let mut permuted = frames.clone();
    permuted.swap(0, 6);
    let base = prior_alpha(&frames);
    assert!(base.max_abs_diff(&prior_alpha(&darker)).unwrap() > 1e-6);
    assert!(base.max_abs_diff(&prior_alpha(&permuted)).unwrap() > 1e-9);
}

#[test]
fn static_clip_with_zero_offsets_matches_single_frame_path() {
    let cfg = small();
    let p = init_params::<f64>(&cfg, 4).unwrap();
    let one = Tensor::uniform(&[3, 16, 16], 0.0, 1.0, 5).unwrap();
    let frames = vec![one; CLIP_LEN];
    let (h1, s1) = outputs(&cfg, &p, &frames);
    let (h2, s2) = outputs(&NetConfig { temporal: false, ..cfg.clone() }, &p, &frames);
    assert!(h1.max_abs_diff(&h2).unwrap() < 1e-12);
    assert!(s1.max_abs_diff(&s2).unwrap() < 1e-12);
}

#[test]
fn output_contracts() {
    let cfg = small();
    let p = init_params::<f64>(&cfg, 5).unwrap();
    let frames = clip(16, 24, 6);
    let (h, s) = outputs(&cfg, &p, &frames);
    assert_eq!(h.shape(), &[3, 16, 24]);
    assert_eq!(s.shape(), &[3, 16, 24]);
    assert_eq!((h.clone(), s), outputs(&cfg, &p, &frames));
    assert!(h.is_finite());
    assert!(infer(&cfg, &p, &frames[..6]).is_err());
    assert!(infer(&cfg, &p, &clip(16, 18, 1)).is_err());
    let tape = Tape::new();
    let b = p.bind(&tape, false);
    let vars: Vec<_> = frames.iter().map(|f| tape.constant(f.clone())).collect();
    let (fusion, offsets) = tsaf(&cfg, &b, &vars).unwrap();
    assert_eq!(fusion.shape(), vec![cfg.channels, 16, 24]);
    assert_eq!(offsets.unwrap().shape(), vec![6 * 18, 16, 24]);
}

#[test]
fn zero_aux_head_gives_zero_frame() {
    let cfg = small();
    let mut p = init_params::<f64>(&cfg, 6).unwrap();
    *p.get_mut("aux.head.w").unwrap() = Tensor::zeros(&[3, cfg.channels, 3, 3]).unwrap();
    let (_, s) = outputs(&cfg, &p, &clip(16, 16, 7));
    assert!(s.data().iter().all(|&v| v == 0.0));
}

#[test]
fn ffe_identity_and_gradient_presence() {
    let cfg = small();
    let mut p = init_params::<f64>(&cfg, 7).unwrap();
    let x = Tensor::uniform(&[cfg.channels, 8, 8], -1.0, 1.0, 8).unwrap();
    for n in ["ffe.expand.w", "ffe.expand.b"] {
        let shape = p.get(n).unwrap().shape().to_vec();
        *p.get_mut(n).unwrap() = Tensor::zeros(&shape).unwrap();
    }
    let tape = Tape::new();
    let b = p.bind(&tape, false);
    let y = ffe(&cfg, &b, tape.constant(x.clone())).unwrap();
    assert!(y.value().max_abs_diff(&x).unwrap() <= 1e-12);

    let p = init_params::<f64>(&cfg, 7).unwrap();
    let tape = Tape::new();
    let b = p.bind(&tape, true);
    let y = ffe(&cfg, &b, tape.constant(x)).unwrap();
    tape.backward(y.mul(y).unwrap().sum().unwrap()).unwrap();
    for n in ["ffe.reduce.w", "ffe.gate.w", "ffe.expand.w"] {
        let g = b.var(n).unwrap().grad().unwrap();
        assert!(g.sq_norm() > 0.0, "{n}");
    }
}

#[test]
fn dmitm_neutral_and_linear_scaling() {
    let cfg = NetConfig { linear_dmitm: true, ..small() };
    let p = init_params::<f64>(&cfg, 8).unwrap();
    let tape = Tape::new();
    let b = p.bind(&tape, false);
    let x = tape.constant(Tensor::uniform(&[cfg.channels, 4, 4], -1.0, 1.0, 9).unwrap());
    let neutral = neutral_prior(&tape, &cfg).unwrap();
    let y = dmitm(&cfg, &b, x, &neutral).unwrap();
    let plain = dmitm(&NetConfig { use_modulation: false, ..cfg.clone() }, &b, x, &neutral).unwrap();
    assert!(y.value().max_abs_diff(&plain.value()).unwrap() <= 1e-12);
    assert_eq!(y.shape(), vec![cfg.channels, 4, 4]);

    let mut doubled = neutral.clone();
    doubled[0][0] = tape.constant(Tensor::full(&[cfg.channels], 2.0).unwrap());
    let y2 = dmitm(&cfg, &b, x, &doubled).unwrap();
    assert!(y2.value().max_abs_diff(&y.value().scaled(2.0)).unwrap() <= 1e-12);
    assert!(dmitm(&cfg, &b, x, &neutral[..1].to_vec()).is_err());
}

#[test]
fn neutral_prior_equals_unmodulated_network() {
    let cfg = small();
    let mut p = init_params::<f64>(&cfg, 9).unwrap();
    randomise(&mut p, "tsaf.off.head.w", 0.05, 1);
    let frames = clip(16, 16, 10);
    let (a, _) = outputs(&cfg, &p, &frames);
    let (b, _) = outputs(&NetConfig { use_modulation: false, ..cfg.clone() }, &p, &frames);
    let (c, _) = outputs(&NetConfig { use_prior: false, ..cfg }, &p, &frames);
    assert!(a.max_abs_diff(&b).unwrap() <= 1e-10);
    assert!(a.max_abs_diff(&c).unwrap() <= 1e-10);
}

#[test]
fn dual_loss_weights() {
    let tape: Tape<f64> = Tape::new();
    let z = tape.constant(Tensor::zeros(&[3, 2, 2]).unwrap());
    let o = tape.constant(Tensor::full(&[3, 2, 2], 1.0).unwrap());
    let v = |a, b, c, d| loss_dual(a, b, c, d, 0.8, 0.2).unwrap().value().data()[0];
    assert_eq!(v(z, z, o, o), 0.0);
    assert!((v(o, z, z, z) - 0.8).abs() < 1e-15);
    assert!((v(z, z, o, z) - 0.2).abs() < 1e-15);
    let small = tape.constant(Tensor::zeros(&[3, 1, 2]).unwrap());
    assert!(loss_dual(z, small, z, z, 0.8, 0.2).is_err());
}

#[test]
fn end_to_end_gradient_check() {
    let cfg = small();
    let mut p = init_params::<f64>(&cfg, 11).unwrap();
    // Non-zero offsets and condition head keep bilinear sampling off its
    // lattice kinks and put every parameter on the loss path.
    randomise(&mut p, "tsaf.off.head.w", 0.05, 2);
    randomise(&mut p, "tsaf.off.head.b", 0.3, 3);
    randomise(&mut p, "cond.head.w", 0.1, 4);
    let frames = clip(16, 16, 12);
    let hdr_t = Tensor::uniform(&[3, 16, 16], 0.0, 1.0, 13).unwrap();
    let sdr_t = Tensor::uniform(&[3, 16, 16], 0.0, 1.0, 14).unwrap();
    let names = [
        "tsaf.shallow.w", "tsaf.off.e0.w", "tsaf.off.e2.w", "tsaf.off.d0.w", "tsaf.off.head.w",
        "tsaf.align.w", "tsaf.fuse.w", "tsaf.res0.conv1.w", "aux.head.w", "ffe.reduce.w",
        "ffe.gate.w", "ffe.expand.b", "dmitm.layer0.w", "dmitm.layer1.b", "hdr.head.w",
        "cond.block0.w", "cond.block2.w", "cond.head.w", "cond.head.b", "tsaf.align.b",
    ];
    for (k, name) in names.iter().enumerate() {
        let x = p.get(name).unwrap().clone();
        let idx = [(k * 7919) % x.len()];
        let err = grad_check_at(
            |tape, v| {
                let mut b = p.bind(tape, false);
                b.replace(name, v)?;
                let vars: Vec<_> = frames.iter().map(|f| tape.constant(f.clone())).collect();
                let out = forward(&cfg, &b, &vars)?;
                loss_dual(out.hdr, tape.constant(hdr_t.clone()), out.sdr, tape.constant(sdr_t.clone()), 0.8, 0.2)
            },
            &x,
            1e-6,
            &idx,
        )
        .unwrap();
        assert!(err <= 1e-3, "{name}: {err}");
    }
}

#[test]
fn zero_learning_rate_freezes_weights() {
    use crate::color::{BitDepth, ColorSpace, Frame};
    use crate::degradation::ClipPair;
    let frame = |s| Frame::new(Tensor::uniform(&[3, 16, 16], 0.0, 1.0, s).unwrap(), ColorSpace::SdrBt709, BitDepth::Float).unwrap();
    let hdr = Frame::new(Tensor::uniform(&[3, 16, 16], 0.0, 1.0, 99).unwrap(), ColorSpace::HdrBt2020Pq, BitDepth::Float).unwrap();
    let pair = ClipPair::new((0..7).map(frame).collect(), frame(50), hdr, 37, 0).unwrap();
    let data = Dataset { clips: vec![pair] };
    let cfg = small();
    let tc = TrainConfig { steps: 3, lr: 0.0, ..TrainConfig::default() };
    let before = init_params::<f32>(&cfg, tc.seed).unwrap();
    let mut calls = 0;
    let out = train::<f32>(&cfg, &tc, &data, None, |_, _| {
        calls += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(out.params, before);
    assert_eq!(out.log.len(), 3);
    assert_eq!(calls, 1);
    assert!(train::<f32>(&cfg, &tc, &Dataset::default(), None, |_, _| Ok(())).is_err());
}

#[test]
fn schedule_halves_after_hold() {
    let tc = TrainConfig::default();
    assert_eq!(lr_at(&tc, 0), 5e-4);
    assert_eq!(lr_at(&tc, 999), 5e-4);
    assert_eq!(lr_at(&tc, 1000), 2.5e-4);
    assert_eq!(lr_at(&tc, 1499), 2.5e-4);
    assert_eq!(lr_at(&tc, 1500), 1.25e-4);
}

#[test]
fn config_keys() {
    let mut c = NetConfig::tiny();
    c.set("channels", "8").unwrap();
    c.set("use_wa", "false").unwrap();
    assert_eq!((c.channels, c.use_wa), (8, false));
    assert!(matches!(c.set("bogus", "1"), Err(Error::Config(_))));
    assert!(matches!(c.set("channels", "x"), Err(Error::Config(_))));
    let mut d = NetConfig::tiny();
    for (k, v) in c.to_pairs() {
        d.set(k, &v).unwrap();
    }
    assert_eq!(c, d);
}
