use super::*;

fn grey(space: ColorSpace, code: f64, h: usize, w: usize) -> Frame {
    Frame::new(Tensor::<f64>::full(&[3, h, w], code).unwrap(), space, BitDepth::Float).unwrap()
}

#[test]
fn pq_anchor_points() {
    assert!(pq_oetf(0.0, PQ_PEAK_NITS).unwrap() < 1e-6);
    assert!((pq_oetf(PQ_PEAK_NITS, PQ_PEAK_NITS).unwrap() - 1.0).abs() < 1e-12);
    // ST 2084 table value for 100 cd/m^2.
    assert!((pq_oetf(100.0, PQ_PEAK_NITS).unwrap() - 0.508_078).abs() < 1e-5);
    assert_eq!(pq_eotf(0.0, PQ_PEAK_NITS), 0.0);
}

#[test]
fn pq_round_trip_grid() {
    for i in 1..=10_000 {
        let l = i as f64;
        let back = pq_eotf(pq_oetf(l, PQ_PEAK_NITS).unwrap(), PQ_PEAK_NITS);
        assert!((back - l).abs() / l <= 1e-6, "{l} -> {back}");
    }
}

#[test]
fn pq_rejects_negative_and_nan() {
    assert!(matches!(pq_oetf(-1.0, PQ_PEAK_NITS), Err(Error::Domain(_))));
    assert!(matches!(pq_oetf(f64::NAN, PQ_PEAK_NITS), Err(Error::Domain(_))));
}

#[test]
fn bt709_round_trip_and_knee() {
    for i in 0..=10_000 {
        let l = i as f64 / 10_000.0;
        assert!((bt709_eotf(bt709_oetf(l)) - l).abs() <= 1e-12);
    }
    let below = bt709_oetf(REC_BETA - 1e-12);
    let above = bt709_oetf(REC_BETA + 1e-12);
    assert!((below - above).abs() < 1e-9);
    assert!((bt709_oetf(1.0) - 1.0).abs() < 1e-12);
}

#[test]
fn gamut_matrix_matches_published_values() {
    let m = gamut_matrix(Gamut::Bt709ToBt2020);
    let want = [[0.6274, 0.3293, 0.0433], [0.0691, 0.9195, 0.0114], [0.0164, 0.0880, 0.8956]];
    for i in 0..3 {
        for j in 0..3 {
            assert!((m[i][j] - want[i][j]).abs() < 1e-4, "{i},{j}: {}", m[i][j]);
        }
        assert!((m[i].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let back = mat_mul(&gamut_matrix(Gamut::Bt2020ToBt709), &m);
    for i in 0..3 {
        for j in 0..3 {
            let id = if i == j { 1.0 } else { 0.0 };
            assert!((back[i][j] - id).abs() < 1e-12);
        }
    }
}

#[test]
fn itp_of_achromatic_is_pq_luma() {
    for nits in [0.5, 100.0, 1000.0] {
        let itp = itp_from_linear2020([nits; 3]);
        assert!((itp[0] - pq_oetf(nits, PQ_PEAK_NITS).unwrap()).abs() < 1e-12);
        assert!(itp[1].abs() < 1e-12 && itp[2].abs() < 1e-12);
    }
}

#[test]
fn sdr_white_sits_at_100_nits_in_itp() {
    let itp = rgb_to_itp(&grey(ColorSpace::SdrBt709, 1.0, 2, 2)).unwrap();
    let want = pq_oetf(SDR_WHITE_NITS, PQ_PEAK_NITS).unwrap();
    assert!((itp.data()[0] - want).abs() < 1e-9);
}

#[test]
fn tonemap_of_100_nit_grey() {
    let code = pq_oetf(100.0, PQ_PEAK_NITS).unwrap();
    let sdr = reference_tonemap(&grey(ColorSpace::HdrBt2020Pq, code, 2, 3)).unwrap();
    let want = bt709_oetf(0.5);
    assert!(sdr.pixels.data().iter().all(|v| (v - want).abs() < 1e-9));
    assert_eq!(sdr.space, ColorSpace::SdrBt709);
}

#[test]
fn inverse_tonemap_undoes_the_grade_in_gamut() {
    let m = gamut_matrix(Gamut::Bt709ToBt2020);
    let mut data = vec![0.0; 3 * 16];
    for p in 0..16 {
        let lin709 = [5.0 + 300.0 * p as f64, 40.0 + 17.0 * p as f64, 2.0 + 600.0 * (p % 3) as f64];
        let lin2020 = apply(&m, lin709);
        for c in 0..3 {
            data[c * 16 + p] = pq_oetf(lin2020[c], PQ_PEAK_NITS).unwrap();
        }
    }
    let hdr = Frame::new(Tensor::<f64>::from_vec(&[3, 4, 4], data).unwrap(), ColorSpace::HdrBt2020Pq, BitDepth::Float)
        .unwrap();
    let back = inverse_tonemap(&reference_tonemap(&hdr).unwrap()).unwrap();
    assert!(back.pixels.max_abs_diff(&hdr.pixels).unwrap() < 1e-9);
}

#[test]
fn frame_contract_checks() {
    let bad = Tensor::<f64>::full(&[3, 2, 2], 1.5).unwrap();
    assert!(matches!(Frame::new(bad, ColorSpace::SdrBt709, BitDepth::Float), Err(Error::Domain(_))));
    let two = Tensor::<f64>::zeros(&[2, 2, 2]).unwrap();
    assert!(matches!(Frame::new(two, ColorSpace::SdrBt709, BitDepth::Float), Err(Error::Shape(_))));
    let sdr = grey(ColorSpace::SdrBt709, 0.5, 2, 2);
    assert!(matches!(reference_tonemap(&sdr), Err(Error::Contract(_))));
}
