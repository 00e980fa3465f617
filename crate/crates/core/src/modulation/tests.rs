use super::*;
use crate::tensor::{grad_check, Tape};
use crate::Error;

fn kernel(w: &[f64], b: &[f64], n: usize, m: usize) -> ConvKernel {
    ConvKernel::<f64>::new(Tensor::<f64>::from_f64(&[n, m, 1, 1], w).unwrap(), Tensor::<f64>::from_f64(&[n], b).unwrap()).unwrap()
}

fn mv(a: &[f64], b: &[f64], g: &[f64]) -> ModulationVectors {
    ModulationVectors::new(
        Tensor::<f64>::from_f64(&[a.len()], a).unwrap(),
        Tensor::<f64>::from_f64(&[b.len()], b).unwrap(),
        Tensor::<f64>::from_f64(&[g.len()], g).unwrap(),
    )
    .unwrap()
}

/// `(W diag(alpha)) (x * gamma) + b alpha + beta`, one pixel at a time.
fn unfolded(x: &Tensor, k: &ConvKernel, v: &ModulationVectors) -> Tensor {
    let (m, h, w) = x.chw().unwrap();
    let n = k.out_channels();
    let mut out = vec![0.0; n * h * w];
    for p in 0..h * w {
        for i in 0..n {
            let a = v.alpha.data()[i];
            let mut acc = k.bias.data()[i] * a + v.beta.data()[i];
            for j in 0..m {
                acc += k.weight.data()[i * m + j] * a * (x.data()[j * h * w + p] * v.gamma.data()[j]);
            }
            out[i * h * w + p] = acc;
        }
    }
    Tensor::<f64>::from_vec(&[n, h, w], out).unwrap()
}

#[test]
fn gfm_neutral_and_scalar() {
    let x = Tensor::<f64>::uniform(&[2, 3, 3], -1.0, 1.0, 1).unwrap();
    let k = kernel(&[1.0, 2.0, -1.0, 0.5], &[0.1, 0.2], 2, 2);
    let plain = conv1x1(&x, &k.weight.clone().reshape(&[2, 2]).unwrap(), &k.bias).unwrap();
    assert_eq!(gfm(&x, &k, &ModulationVectors::neutral(2, 2).unwrap()).unwrap(), plain);

    let x = Tensor::<f64>::full(&[1, 1, 1], 3.0).unwrap();
    let y = gfm(&x, &kernel(&[1.0], &[0.0], 1, 1), &mv(&[2.0], &[1.0], &[5.0])).unwrap();
    assert_eq!(y.data(), &[7.0]);
}

#[test]
fn fold_hand_cases() {
    let k = kernel(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0], 2, 2);
    let f = fold_modulation(&k, &mv(&[2.0, 1.0], &[0.0, 0.0], &[1.0, 3.0])).unwrap();
    assert_eq!(f.weights.data(), &[2.0, 12.0, 3.0, 12.0]);
    let f = fold_modulation(&k, &mv(&[2.0, 3.0], &[0.0, -1.0], &[1.0, 1.0])).unwrap();
    assert_eq!(f.bias_term.data(), &[2.0, 2.0]);
    let f = fold_modulation(&k, &ModulationVectors::neutral(2, 2).unwrap()).unwrap();
    assert_eq!(f.weights.data(), &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(f.bias_term.data(), &[1.0, 1.0]);
}

#[test]
fn dmc_degenerate_cases() {
    let x = Tensor::<f64>::uniform(&[3, 4, 5], -1.0, 1.0, 2).unwrap();
    let k = ConvKernel::<f64>::random(2, 3, 1, 3).unwrap();
    let v = mv(&[0.5, -2.0], &[0.3, 0.0], &[1.0, 1.0, 1.0]);
    assert!(dmc(&x, &k, &v).unwrap().max_abs_diff(&gfm(&x, &k, &v).unwrap()).unwrap() < 1e-15);

    let eye = kernel(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[0.0; 3], 3, 3);
    let y = dmc(&x, &eye, &mv(&[1.0; 3], &[0.0; 3], &[2.0; 3])).unwrap();
    assert_eq!(y, x.scaled(2.0));
}

#[test]
fn dmc_matches_unfolded_oracle() {
    for t in 0..50u64 {
        let (m, n) = (1 + (t % 5) as usize, 1 + (t % 3) as usize);
        let x = Tensor::<f64>::uniform(&[m, 3, 4], -2.0, 2.0, t).unwrap();
        let k = ConvKernel::<f64>::random(n, m, 1, 100 + t).unwrap();
        let v = ModulationVectors::new(
            Tensor::<f64>::uniform(&[n], -2.0, 2.0, 200 + t).unwrap(),
            Tensor::<f64>::uniform(&[n], -1.0, 1.0, 300 + t).unwrap(),
            Tensor::<f64>::uniform(&[m], -2.0, 2.0, 400 + t).unwrap(),
        )
        .unwrap();
        let got = dmc(&x, &k, &v).unwrap();
        assert!(got.max_abs_diff(&unfolded(&x, &k, &v)).unwrap() <= 1e-10);
    }
}

#[test]
fn tap_fold_matches_modulated_conv() {
    let x = Tensor::<f64>::uniform(&[2, 5, 5], -1.0, 1.0, 9).unwrap();
    let k = ConvKernel::<f64>::random(3, 2, 3, 10).unwrap();
    let v = mv(&[1.5, -0.5, 0.0], &[0.1, 0.2, 0.3], &[2.0, -1.0]);
    let folded = crate::nn::conv2d(&x, &fold_modulation_taps(&k, &v).unwrap(), 1, Padding::Same).unwrap();
    let mut xg = x.clone();
    for j in 0..2 {
        let g = v.gamma.data()[j];
        xg.plane_mut(j).iter_mut().for_each(|p| *p *= g);
    }
    let mut want = crate::nn::conv2d(&xg, &k, 1, Padding::Same).unwrap();
    for i in 0..3 {
        let (a, b) = (v.alpha.data()[i], v.beta.data()[i]);
        want.plane_mut(i).iter_mut().for_each(|p| *p = *p * a + b);
    }
    assert!(folded.max_abs_diff(&want).unwrap() < 1e-12);
}

#[test]
fn shape_errors() {
    let k = ConvKernel::<f64>::random(2, 3, 1, 1).unwrap();
    assert!(matches!(fold_modulation(&k, &ModulationVectors::neutral(3, 3).unwrap()), Err(Error::Shape(_))));
    assert!(matches!(fold_modulation(&k, &ModulationVectors::neutral(2, 2).unwrap()), Err(Error::Shape(_))));
    let k3 = ConvKernel::<f64>::random(2, 3, 3, 1).unwrap();
    assert!(matches!(fold_modulation(&k3, &ModulationVectors::neutral(2, 3).unwrap()), Err(Error::Shape(_))));
}

#[test]
fn cost_table() {
    assert_eq!(modulation_cost(720, 480, 64, 64), (44_236_800, 4_224));
    assert_eq!(modulation_cost(1080, 1920, 64, 64), (265_420_800, 4_224));
    assert_eq!(modulation_cost(2160, 3840, 64, 64), (1_061_683_200, 4_224));
}

#[test]
fn dmc_var_matches_and_differentiates() {
    let x = Tensor::<f64>::uniform(&[3, 4, 4], -1.0, 1.0, 5).unwrap();
    let k = ConvKernel::<f64>::random(2, 3, 1, 6).unwrap();
    let v = mv(&[0.7, -1.2], &[0.1, 0.4], &[1.1, 0.3, -0.8]);
    let tape = Tape::new();
    let y = dmc_var(
        tape.constant(x.clone()),
        tape.constant(k.weight.clone()),
        tape.constant(k.bias.clone()),
        tape.constant(v.alpha.clone()),
        tape.constant(v.beta.clone()),
        tape.constant(v.gamma.clone()),
    )
    .unwrap();
    assert!(y.value().max_abs_diff(&dmc(&x, &k, &v).unwrap()).unwrap() < 1e-14);

    let (kc, vc, xc) = (k.clone(), v.clone(), x.clone());
    let err = grad_check(
        move |t, alpha| {
            let y = dmc_var(
                t.constant(xc.clone()),
                t.constant(kc.weight.clone()),
                t.constant(kc.bias.clone()),
                alpha,
                t.constant(vc.beta.clone()),
                t.constant(vc.gamma.clone()),
            )?;
            y.mul(y)?.sum()
        },
        &v.alpha,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}
