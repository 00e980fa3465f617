use super::*;
use crate::metrics::{mse, psnr};
use crate::source::{hdr_clip, SourceOptions};
use crate::tensor::Tensor;

fn sdr(h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f64) -> Frame {
    let mut data = Vec::new();
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                data.push(f(c, y, x));
            }
        }
    }
    Frame::new(Tensor::<f64>::from_vec(&[3, h, w], data).unwrap(), ColorSpace::SdrBt709, BitDepth::Float).unwrap()
}

fn test_frame() -> Frame {
    let noise = Tensor::<f64>::uniform(&[3, 32, 32], -0.1, 0.1, 11).unwrap();
    sdr(32, 32, |c, y, x| (0.1 + 0.6 * (x + y) as f64 / 62.0 + noise.data()[(c * 32 + y) * 32 + x]).clamp(0.0, 1.0))
}

#[test]
fn quantize_cases() {
    let half = sdr(8, 8, |_, _, _| 0.5);
    let q = quantize(&half, 8).unwrap();
    assert_eq!(q.pixels.data()[0], 128.0 / 255.0);
    assert_eq!(q.depth, BitDepth::Eight);
    assert_eq!(quantize(&q, 8).unwrap(), q);
    let f = test_frame();
    assert!(f.pixels.max_abs_diff(&quantize(&f, 8).unwrap().pixels).unwrap() <= 1.0 / 510.0 + 1e-15);
    assert!(matches!(quantize(&f, 12), Err(Error::Contract(_))));
}

#[test]
fn codec_keeps_flat_blocks() {
    let flat = sdr(16, 16, |_, _, _| 0.3);
    for qp in QP_LABELS {
        let step = qp_step(qp).unwrap();
        let out = codec_artifact_sim(&flat, qp).unwrap();
        assert!(out.pixels.max_abs_diff(&flat.pixels).unwrap() <= step / 2.0);
    }
}

#[test]
fn fine_step_is_near_lossless() {
    let f = test_frame();
    let step = 1.0 / 255.0;
    let out = codec_artifact_sim_with_step(&f, step).unwrap();
    assert!(mse(&out.pixels, &f.pixels).unwrap() <= (step / 2.0).powi(2));
}

#[test]
fn severity_grows_with_qp() {
    let f = test_frame();
    let errs: Vec<f64> =
        QP_LABELS.iter().map(|&qp| mse(&codec_artifact_sim(&f, qp).unwrap().pixels, &f.pixels).unwrap()).collect();
    assert!(errs.windows(2).all(|w| w[0] < w[1]), "{errs:?}");
}

#[test]
fn codec_contracts() {
    assert!(matches!(codec_artifact_sim(&sdr(12, 16, |_, _, _| 0.0), 27), Err(Error::Shape(_))));
    assert!(matches!(qp_step(30), Err(Error::Contract(_))));
}

#[test]
fn clip_pair_synthesis() {
    let hdr = hdr_clip(SourceOptions::new(16, 16), 5).unwrap();
    let a = synth_clip_pair(&hdr, 37, 5).unwrap();
    assert_eq!(a, synth_clip_pair(&hdr, 37, 5).unwrap());
    assert_eq!(a.hq_sdr_mid, reference_tonemap(&hdr[MID]).unwrap());
    assert_eq!(a.hq_hdr_mid, hdr[MID]);
    assert!(matches!(synth_clip_pair(&hdr[..6], 37, 5), Err(Error::Contract(_))));

    let same = vec![hdr[0].clone(); CLIP_LEN];
    let p = synth_clip_pair(&same, 27, 1).unwrap();
    assert!(p.lq_sdr.windows(2).all(|w| w[0] == w[1]));

    let psnrs: Vec<f64> = QP_LABELS
        .iter()
        .map(|&qp| {
            let p = synth_clip_pair(&hdr, qp, 5).unwrap();
            psnr(&p.lq_sdr[MID], &p.hq_sdr_mid, 1.0).unwrap()
        })
        .collect();
    assert!(psnrs.windows(2).all(|w| w[0] > w[1]), "{psnrs:?}");
}
