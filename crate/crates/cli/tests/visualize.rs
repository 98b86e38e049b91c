use lgseg_cli::netpbm::{self, decode, min_max_bytes};
use lgseg_cli::visualize::{figure, pos_similarity, VisualizeArgs, What};
use lgseg_cli::CliError;
use lgseg_harness::{batch_images, synth_seg_dataset};
use lgseg_models::{DecoderKind, HlgConfig, SegModel, SegModelConfig, SetrConfig};
use lgseg_tensor::{ParamStore, Tensor};

fn setr() -> (SegModel, ParamStore<f64>) {
    SegModel::build(&SegModelConfig::Setr(SetrConfig::toy(DecoderKind::Pup, 4)), 3).unwrap()
}

fn hlg() -> (SegModel, ParamStore<f64>) {
    SegModel::build(&SegModelConfig::Hlg(HlgConfig::toy(4)), 3).unwrap()
}

fn image(size: usize) -> Tensor<f64> {
    let corpus = synth_seg_dataset(1, size, size, 4, 9).unwrap();
    batch_images(&[&corpus[0]]).unwrap()
}

fn args(what: What, layer: usize, head: usize, point: (usize, usize)) -> VisualizeArgs {
    VisualizeArgs {
        what,
        layer,
        head,
        point,
    }
}

#[test]
fn orthogonal_positions_give_identity_tiles() {
    let mut table = vec![0.0; 4 * 4];
    for i in 0..4 {
        table[i * 4 + i] = 2.5;
    }
    let sim = pos_similarity(&table, (2, 2), 4);
    assert_eq!(sim.len(), 16);
    for r in 0..4 {
        for c in 0..4 {
            let (ir, jr, ic, jc) = (r / 2, r % 2, c / 2, c % 2);
            let expected = if (ir, ic) == (jr, jc) { 1.0 } else { 0.0 };
            assert_eq!(sim[r * 4 + c], expected, "({r},{c})");
        }
    }
}

#[test]
fn random_position_table_has_unit_diagonal() {
    let (model, store) = setr();
    let fig = figure(&model, &store, &image(64), &args(What::PosSim, 0, 0, (0, 0))).unwrap();
    assert_eq!((fig.width, fig.height), (64, 64));
    let (mut off, mut n) = (0.0, 0);
    for ir in 0..8 {
        for ic in 0..8 {
            for jr in 0..8 {
                for jc in 0..8 {
                    let v = fig.values[(ir * 8 + jr) * 64 + ic * 8 + jc];
                    if (ir, ic) == (jr, jc) {
                        assert!((v - 1.0).abs() < 1e-12);
                    } else {
                        off += v.abs();
                        n += 1;
                    }
                }
            }
        }
    }
    assert!(off / (n as f64) < 0.2, "mean |cos| off the diagonal {}", off / n as f64);
}

#[test]
fn setr_attention_rows_sum_to_one() {
    let (model, store) = setr();
    let img = image(32);
    for (layer, head, point) in [(0, 0, (0, 0)), (1, 3, (3, 2)), (1, 1, (2, 3))] {
        let fig = figure(&model, &store, &img, &args(What::Attention, layer, head, point)).unwrap();
        assert_eq!((fig.width, fig.height), (4, 4));
        let sum: f64 = fig.values.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9, "{layer} {head} {point:?}: {sum}");
        assert!(fig.values.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn hlg_attention_rows_sum_to_one() {
    let (model, store) = hlg();
    let img = image(64);
    for (layer, head) in [(0, 0), (3, 1), (7, 7)] {
        let fig = figure(&model, &store, &img, &args(What::Attention, layer, head, (1, 1))).unwrap();
        let sum: f64 = fig.values.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9, "{layer} {head}: {sum}");
    }
}

#[test]
fn out_of_range_requests_are_usage_errors() {
    let (model, store) = setr();
    let img = image(32);
    let usage = |a: VisualizeArgs, m: &SegModel, s: &ParamStore<f64>, img: &Tensor<f64>| match figure(m, s, img, &a) {
        Err(CliError::Usage(msg)) => msg,
        other => panic!("expected usage error, got {other:?}"),
    };
    assert!(usage(args(What::Attention, 0, 0, (4, 0)), &model, &store, &img).contains("outside"));
    assert!(usage(args(What::Attention, 0, 0, (0, 9)), &model, &store, &img).contains("outside"));
    assert!(usage(args(What::Attention, 5, 0, (0, 0)), &model, &store, &img).contains("layer 5"));
    assert!(usage(args(What::Attention, 0, 4, (0, 0)), &model, &store, &img).contains("head 4"));
    assert!(usage(args(What::Features, 7, 0, (0, 0)), &model, &store, &img).contains("layer 7"));
    let (hm, hs) = hlg();
    let himg = image(64);
    assert!(usage(args(What::PosSim, 0, 0, (0, 0)), &hm, &hs, &himg).contains("SETR"));
    assert!(usage(args(What::Attention, 0, 0, (99, 0)), &hm, &hs, &himg).contains("outside"));
}

#[test]
fn feature_maps_follow_the_token_grid() {
    let (model, store) = setr();
    let fig = figure(&model, &store, &image(32), &args(What::Features, 1, 0, (0, 0))).unwrap();
    assert_eq!((fig.width, fig.height, fig.values.len()), (4, 4, 16));
    let (model, store) = hlg();
    let sizes: Vec<usize> = (0..4)
        .map(|l| {
            figure(&model, &store, &image(64), &args(What::Features, l, 0, (0, 0)))
                .unwrap()
                .width
        })
        .collect();
    assert_eq!(sizes, [16, 8, 4, 2]);
}

#[test]
fn figures_are_deterministic() {
    let (model, store) = hlg();
    let a = figure(&model, &store, &image(64), &args(What::Attention, 2, 1, (0, 1))).unwrap();
    let b = figure(&model, &store, &image(64), &args(What::Attention, 2, 1, (0, 1))).unwrap();
    let bytes = |f: &lgseg_cli::visualize::Figure| netpbm::pgm(f.width, f.height, &min_max_bytes(&f.values));
    assert_eq!(bytes(&a), bytes(&b));
}

#[test]
fn min_max_normalization() {
    assert_eq!(min_max_bytes(&[2.0, 3.0, 4.0]), [0, 128, 255]);
    assert_eq!(min_max_bytes(&[0.7; 3]), [0, 0, 0]);
    assert_eq!(min_max_bytes(&[]), Vec::<u8>::new());
}

#[test]
fn netpbm_roundtrip() {
    let gray = decode(&netpbm::pgm(3, 2, &[0, 1, 2, 3, 4, 255])).unwrap();
    assert_eq!((gray.width, gray.height, gray.channels), (3, 2, 1));
    assert_eq!(gray.pixels, [0, 1, 2, 3, 4, 255]);
    let rgb: Vec<u8> = (0..12).collect();
    let col = decode(&netpbm::ppm(2, 2, &rgb)).unwrap();
    assert_eq!((col.channels, col.pixels), (3, rgb));
    let commented = b"P5\n# made by hand\n2 1\n255\n\x07\x08";
    assert_eq!(decode(commented).unwrap().pixels, [7, 8]);
    assert!(decode(b"P2\n1 1\n255\n0").is_err());
    assert!(decode(b"P5\n2 2\n255\n\x00").is_err());
    assert!(decode(b"P5\n1 1\n65535\n\x00\x00").is_err());
}
