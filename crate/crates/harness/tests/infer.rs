use lgseg_harness::*;
use lgseg_models::{DecoderKind, SegModel, SegModelConfig, SetrConfig};
use lgseg_tensor::Tensor;

fn ramp(n: usize, h: usize, w: usize, c: usize) -> Tensor<f64> {
    let data: Vec<f64> = (0..n * h * w * c).map(|i| (i as f64 * 0.37).sin()).collect();
    Tensor::from_vec(&[n, h, w, c], data).unwrap()
}

#[test]
fn full_image_window_equals_direct_forward() {
    let cfg = SegModelConfig::Setr(SetrConfig::toy(DecoderKind::Pup, 3));
    let (model, store) = SegModel::build::<f64>(&cfg, 4).unwrap();
    let x = ramp(2, 32, 24, 3);
    let direct = forward_logits(&model, &store, &x).unwrap();
    let mut calls = 0;
    let slid = sliding_window_infer(&x, (32, 24), (8, 8), |crop| {
        calls += 1;
        forward_logits(&model, &store, crop)
    })
    .unwrap();
    assert_eq!(calls, 1);
    assert_eq!(slid.shape(), direct.shape());
    assert!(slid.max_abs_diff(&direct) <= 1e-6);
}

#[test]
fn constant_model_gives_constant_logits_for_any_stride() {
    let x = ramp(1, 23, 19, 3);
    for stride in [(1, 1), (3, 5), (8, 8), (7, 2)] {
        let out = sliding_window_infer(&x, (8, 8), stride, |crop| {
            let s = crop.shape();
            Ok(Tensor::full(&[s[0], s[1], s[2], 2], 0.75))
        })
        .unwrap();
        assert_eq!(out.shape(), &[1, 23, 19, 2]);
        assert!(out.data().iter().all(|&v| v == 0.75));
    }
}

/// Width 6, window 4, stride 2: windows at columns 0 and 2 overlap on 2..4.
#[test]
fn two_window_overlap_matches_hand_accumulation() {
    let x = Tensor::<f64>::from_f64(&[1, 1, 6, 1], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let mut seen = Vec::new();
    let out = sliding_window_infer(&x, (1, 4), (1, 2), |crop| {
        seen.push(crop.to_f64_vec());
        let tag = seen.len() as f64 * 100.0;
        Ok(crop.map(|v| v + tag))
    })
    .unwrap();
    assert_eq!(seen, vec![vec![0.0, 1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0, 5.0]]);
    let expect = [100.0, 101.0, 152.0, 153.0, 204.0, 205.0];
    assert_eq!(out.to_f64_vec(), expect);
}

#[test]
fn last_window_is_flush_with_the_edge() {
    let x = ramp(1, 10, 10, 1);
    let mut origins = Vec::new();
    sliding_window_infer(&x, (4, 4), (4, 4), |crop| {
        origins.push(crop.data()[0]);
        Ok(crop.clone())
    })
    .unwrap();
    let at = |r: usize, c: usize| x.data()[r * 10 + c];
    let rows = [0, 4, 6];
    let expect: Vec<f64> = rows.iter().flat_map(|&r| rows.iter().map(move |&c| at(r, c))).collect();
    assert_eq!(origins, expect);
}

#[test]
fn images_smaller_than_the_window_are_padded() {
    let x = ramp(1, 5, 3, 2);
    let out = sliding_window_infer(&x, (8, 8), (4, 4), |crop| {
        assert_eq!(crop.shape(), &[1, 8, 8, 2]);
        Ok(crop.clone())
    })
    .unwrap();
    assert!(out.bit_eq(&x));
}

#[test]
fn bad_arguments() {
    let x = ramp(1, 4, 4, 1);
    assert!(sliding_window_infer(&x, (0, 4), (1, 1), |c| Ok(c.clone())).is_err());
    assert!(sliding_window_infer(&x, (4, 4), (0, 1), |c| Ok(c.clone())).is_err());
    assert!(sliding_window_infer(&x, (2, 2), (3, 1), |c| Ok(c.clone())).is_err());
    let flat = Tensor::<f64>::zeros(&[4, 4]);
    assert!(sliding_window_infer(&flat, (2, 2), (1, 1), |c| Ok(c.clone())).is_err());
    assert!(sliding_window_infer(&x, (2, 2), (1, 1), |_| Ok(Tensor::zeros(&[1, 3, 3, 1]))).is_err());
}
