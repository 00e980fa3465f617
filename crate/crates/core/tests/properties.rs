use didnet::color::{self, BitDepth, ColorSpace, Frame, Gamut};
use didnet::modulation::{dmc, fold_modulation, gfm, ModulationVectors};
use didnet::nn::{conv1x1, conv2d, deform_conv2d, ConvKernel, OffsetField, Padding};
use didnet::tensor::{read_dten, write_dten};
use didnet::wavelet::{dwt2_haar, idwt2_haar};
use didnet::{metrics, Tensor};
use proptest::prelude::*;

fn tensor(shape: &'static [usize]) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-2.0f64..2.0, n).prop_map(move |v| Tensor::from_vec(shape, v).unwrap())
}

fn even_tensor() -> impl Strategy<Value = Tensor> {
    (1usize..4, 1usize..6, 1usize..6).prop_flat_map(|(c, h, w)| {
        prop::collection::vec(-1.0f64..1.0, c * 4 * h * w).prop_map(move |v| Tensor::from_vec(&[c, 2 * h, 2 * w], v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn haar_is_orthonormal(x in even_tensor()) {
        let c = dwt2_haar(&x).unwrap();
        prop_assert!(idwt2_haar(&c).unwrap().max_abs_diff(&x).unwrap() <= 1e-12);
        let e: f64 = [&c.ll, &c.lh, &c.hl, &c.hh].iter().map(|s| s.sq_norm()).sum();
        prop_assert!((e - x.sq_norm()).abs() <= 1e-12 * x.sq_norm().max(1.0));
    }

    #[test]
    fn fold_matches_feature_modulation(
        x in tensor(&[3, 4, 5]),
        w in tensor(&[2, 3, 1, 1]),
        b in tensor(&[2]),
        a in tensor(&[2]),
        be in tensor(&[2]),
    ) {
        let k = ConvKernel::new(w, b).unwrap();
        let mv = ModulationVectors::new(a, be, Tensor::full(&[3], 1.0).unwrap()).unwrap();
        let f = fold_modulation(&k, &mv).unwrap();
        let folded = conv1x1(&x, &f.weights, &f.bias_term).unwrap();
        prop_assert!(gfm(&x, &k, &mv).unwrap().max_abs_diff(&folded).unwrap() <= 1e-10);
    }

    #[test]
    fn dmc_gamma_scales_input(x in tensor(&[3, 3, 3]), w in tensor(&[2, 3, 1, 1]), g in tensor(&[3])) {
        let k = ConvKernel::new(w, Tensor::zeros(&[2]).unwrap()).unwrap();
        let mv = ModulationVectors::new(Tensor::full(&[2], 1.0).unwrap(), Tensor::zeros(&[2]).unwrap(), g.clone()).unwrap();
        let mut xg = x.clone();
        for j in 0..3 {
            let s = g.data()[j];
            xg.plane_mut(j).iter_mut().for_each(|v| *v *= s);
        }
        let plain = ModulationVectors::neutral(2, 3).unwrap();
        prop_assert!(dmc(&x, &k, &mv).unwrap().max_abs_diff(&dmc(&xg, &k, &plain).unwrap()).unwrap() <= 1e-12);
    }

    #[test]
    fn zero_offsets_are_plain_conv(x in tensor(&[2, 5, 6]), w in tensor(&[3, 2, 3, 3]), b in tensor(&[3])) {
        let k = ConvKernel::new(w, b).unwrap();
        let off = OffsetField::uniform_shift(9, 5, 6, 0.0, 0.0).unwrap();
        let d = deform_conv2d(&x, &k, &off).unwrap();
        prop_assert!(d.max_abs_diff(&conv2d(&x, &k, 1, Padding::Same).unwrap()).unwrap() <= 1e-12);
    }

    #[test]
    fn pq_round_trip(nits in 1e-3f64..10_000.0) {
        let back = color::pq_eotf(color::pq_oetf(nits, color::PQ_PEAK_NITS).unwrap(), color::PQ_PEAK_NITS);
        prop_assert!((back - nits).abs() / nits <= 1e-6);
    }

    #[test]
    fn bt709_round_trip(v in 0.0f64..1.0) {
        prop_assert!((color::bt709_oetf(color::bt709_eotf(v)) - v).abs() <= 1e-6 * v.max(1e-6));
    }

    #[test]
    fn gamut_round_trip(x in tensor(&[3, 2, 2])) {
        let back = color::gamut_convert(&color::gamut_convert(&x, Gamut::Bt709ToBt2020).unwrap(), Gamut::Bt2020ToBt709).unwrap();
        prop_assert!(back.max_abs_diff(&x).unwrap() <= 1e-9);
    }

    #[test]
    fn achromatic_has_no_chroma(y in 0.0f64..10_000.0) {
        let itp = color::itp_from_linear2020([y, y, y]);
        prop_assert!(itp[1].abs() <= 1e-12 && itp[2].abs() <= 1e-12);
    }

    #[test]
    fn metric_symmetry(a in prop::collection::vec(0.0f64..1.0, 3 * 16 * 16), b in prop::collection::vec(0.0f64..1.0, 3 * 16 * 16)) {
        let fa = Frame::new(Tensor::from_vec(&[3, 16, 16], a).unwrap(), ColorSpace::HdrBt2020Pq, BitDepth::Float).unwrap();
        let fb = Frame::new(Tensor::from_vec(&[3, 16, 16], b).unwrap(), ColorSpace::HdrBt2020Pq, BitDepth::Float).unwrap();
        prop_assert_eq!(metrics::psnr(&fa, &fb, 1.0).unwrap(), metrics::psnr(&fb, &fa, 1.0).unwrap());
        prop_assert_eq!(metrics::ssim(&fa, &fb).unwrap(), metrics::ssim(&fb, &fa).unwrap());
        prop_assert_eq!(metrics::delta_e_itp(&fa, &fb).unwrap(), metrics::delta_e_itp(&fb, &fa).unwrap());
        prop_assert_eq!(metrics::delta_e_itp(&fa, &fa).unwrap(), 0.0);
    }

    #[test]
    fn dten_round_trip(x in tensor(&[2, 3, 4])) {
        let mut buf = Vec::new();
        write_dten(&x, &mut buf).unwrap();
        prop_assert_eq!(read_dten::<f64, _>(buf.as_slice()).unwrap(), x);
    }
}
