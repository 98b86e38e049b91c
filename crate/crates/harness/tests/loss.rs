use lgseg_harness::*;
use lgseg_models::SegmentationOutput;
use lgseg_tensor::{Graph, GraphOptions, Tensor};

fn labels(n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|i| i % k).collect()
}

#[test]
fn uniform_logits_give_ln_k() {
    let g = Graph::<f64>::standalone(GraphOptions::eval());
    for k in [2, 3, 19] {
        let out = SegmentationOutput {
            logits: g.constant(Tensor::zeros(&[2, 3, 4, k])),
            aux: vec![],
        };
        let l = seg_loss(&out, &labels(24, k), AUX_WEIGHT).unwrap();
        assert!((l.value().item() - (k as f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn confident_correct_logits_drive_loss_to_zero() {
    let g = Graph::<f64>::standalone(GraphOptions::eval());
    let lab = labels(6, 3);
    let mut prev = f64::INFINITY;
    for scale in [1.0, 4.0, 16.0, 64.0] {
        let mut data = vec![0.0; 18];
        for (i, &l) in lab.iter().enumerate() {
            data[i * 3 + l] = scale;
        }
        let out = SegmentationOutput {
            logits: g.constant(Tensor::from_f64(&[1, 2, 3, 3], &data).unwrap()),
            aux: vec![],
        };
        let l = seg_loss(&out, &lab, 0.0).unwrap().value().item();
        assert!(l < prev);
        prev = l;
    }
    assert!(prev < 1e-25);
}

#[test]
fn aux_terms_are_weighted_and_summed() {
    let g = Graph::<f64>::standalone(GraphOptions::eval());
    let t = |seed: f64| {
        let d: Vec<f64> = (0..12).map(|i| ((i as f64 + seed) * 1.3).sin()).collect();
        g.constant(Tensor::from_f64(&[1, 2, 2, 3], &d).unwrap())
    };
    let lab = vec![0, 2, 1, 255];
    let single = |v| {
        seg_loss(&SegmentationOutput { logits: v, aux: vec![] }, &lab, 0.0)
            .unwrap()
            .value()
            .item()
    };
    let (main, a1, a2) = (single(t(0.0)), single(t(1.0)), single(t(2.0)));
    let out = SegmentationOutput {
        logits: t(0.0),
        aux: vec![t(1.0), t(2.0)],
    };
    let full = seg_loss(&out, &lab, 0.4).unwrap().value().item();
    assert!((full - (main + 0.4 * (a1 + a2))).abs() < 1e-12);
    assert_eq!(seg_loss(&out, &lab, 0.0).unwrap().value().item(), main);
}

#[test]
fn ignored_pixels_are_excluded() {
    let g = Graph::<f64>::standalone(GraphOptions::eval());
    let logits = g.constant(Tensor::from_f64(&[1, 1, 2, 2], &[9.0, -9.0, 0.0, 0.0]).unwrap());
    let out = SegmentationOutput { logits, aux: vec![] };
    let l = seg_loss(&out, &[255, 1], 0.4).unwrap().value().item();
    assert!((l - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn bad_labels_and_shapes_error() {
    let g = Graph::<f64>::standalone(GraphOptions::eval());
    let out = SegmentationOutput {
        logits: g.constant(Tensor::zeros(&[1, 2, 2, 3])),
        aux: vec![],
    };
    assert!(seg_loss(&out, &[0, 1, 2, 3], 0.4).is_err());
    assert!(seg_loss(&out, &[0, 1, 2], 0.4).is_err());
}
