mod common;

use lgseg_models::hlg::{WindowGeometry, WindowPartition};
use lgseg_tensor::{Graph, GraphOptions, Tensor};
use proptest::prelude::*;
use rand::Rng;

/// Direct loop oracle for window contents.
fn oracle_windows(x: &Tensor<f64>, r: usize, d: usize) -> (Vec<f64>, usize) {
    let s = x.shape();
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    let block = r * d;
    let (ph, pw) = (h.div_ceil(block) * block, w.div_ceil(block) * block);
    let (nwr, nwc) = (ph / r, pw / r);
    let mut out = Vec::new();
    for b in 0..n {
        for wr in 0..nwr {
            for wc in 0..nwc {
                for ir in 0..r {
                    for ic in 0..r {
                        let row = (wr / d) * block + ir * d + wr % d;
                        let col = (wc / d) * block + ic * d + wc % d;
                        for ch in 0..c {
                            out.push(if row < h && col < w {
                                x.data()[((b * h + row) * w + col) * c + ch]
                            } else {
                                0.0
                            });
                        }
                    }
                }
            }
        }
    }
    (out, nwr * nwc)
}

#[test]
fn stage_one_grid_has_64_windows() {
    let geom = WindowGeometry::new(56, 56, 7, 1);
    assert_eq!(geom.num_windows(), 64);
    assert!(!geom.is_padded());
}

#[test]
fn dilated_14_by_14_follows_residue_classes() {
    let geom = WindowGeometry::new(14, 14, 7, 2);
    assert_eq!(geom.num_windows(), 4);
    for r in 0..14 {
        for c in 0..14 {
            let (win, idx) = geom.locate(r, c);
            assert_eq!(win, (r % 2) * 2 + c % 2);
            assert_eq!(idx, (r / 2) * 7 + c / 2);
            assert_eq!(geom.position(win, idx), (r, c));
        }
    }
}

#[test]
fn partition_matches_loop_oracle() {
    let mut rng = common::rng(3);
    for &(h, w, r, d) in &[
        (14, 14, 7, 2),
        (9, 11, 3, 2),
        (8, 8, 4, 1),
        (5, 7, 2, 3),
        (16, 16, 4, 4),
    ] {
        let x = common::uniform::<f64>(&mut rng, &[2, h, w, 3], 1.0);
        let g = Graph::standalone(GraphOptions::eval());
        let p = WindowPartition::new(&g.input(x.clone(), false), r, d).unwrap();
        let (want, nw) = oracle_windows(&x, r, d);
        assert_eq!(p.windows.shape(), &[2 * nw, r * r, 3]);
        assert_eq!(p.windows.value().data(), &want[..], "grid {h}x{w} R={r} D={d}");
    }
}

#[test]
fn dilation_one_equals_plain_tiling() {
    let mut rng = common::rng(4);
    let x = common::uniform::<f64>(&mut rng, &[1, 12, 10, 2], 1.0);
    let g = Graph::standalone(GraphOptions::eval());
    let p = WindowPartition::new(&g.input(x.clone(), false), 4, 1).unwrap();
    let mut plain = Vec::new();
    for br in 0..3 {
        for bc in 0..3 {
            for ir in 0..4 {
                for ic in 0..4 {
                    let (row, col) = (br * 4 + ir, bc * 4 + ic);
                    for ch in 0..2 {
                        plain.push(if col < 10 {
                            x.data()[(row * 10 + col) * 2 + ch]
                        } else {
                            0.0
                        });
                    }
                }
            }
        }
    }
    assert_eq!(p.windows.value().data(), &plain[..]);
}

#[test]
fn single_window_is_a_reshape() {
    let mut rng = common::rng(5);
    let x = common::uniform::<f32>(&mut rng, &[2, 7, 7, 4], 1.0);
    let g = Graph::standalone(GraphOptions::eval());
    let p = WindowPartition::new(&g.input(x.clone(), false), 7, 1).unwrap();
    assert_eq!(p.windows.shape(), &[2, 49, 4]);
    assert_eq!(p.windows.value().data(), x.data());
}

#[test]
fn roundtrip_fuzz_thousand_cases() {
    let mut rng = common::rng(6);
    for case in 0..1000 {
        let (h, w) = (rng.gen_range(1..=20), rng.gen_range(1..=20));
        let (r, d) = (rng.gen_range(1..=6), rng.gen_range(1..=4));
        let n = rng.gen_range(1..=2);
        let x = common::uniform::<f32>(&mut rng, &[n, h, w, 2], 10.0);
        let g = Graph::standalone(GraphOptions::eval());
        let p = WindowPartition::new(&g.input(x.clone(), false), r, d).unwrap();
        let back = p.assemble().unwrap();
        assert!(back.value().bit_eq(&x), "case {case}: {h}x{w} R={r} D={d}");
    }
}

#[test]
fn padding_slots_are_zero_and_flagged() {
    let geom = WindowGeometry::new(5, 6, 4, 1);
    let mask = geom.padding_mask();
    let g = Graph::standalone(GraphOptions::eval());
    let x = g.input(Tensor::<f64>::ones(&[1, 5, 6, 1]), false);
    let p = WindowPartition::new(&x, 4, 1).unwrap();
    for (v, pad) in p.windows.value().data().iter().zip(&mask) {
        assert_eq!(*v == 0.0, *pad);
    }
}

#[test]
fn rejects_zero_window() {
    let g = Graph::standalone(GraphOptions::eval());
    let x = g.input(Tensor::<f64>::ones(&[1, 4, 4, 1]), false);
    assert!(WindowPartition::new(&x, 0, 1).is_err());
    assert!(WindowPartition::new(&x, 2, 0).is_err());
}

proptest! {
    #[test]
    fn locate_inverts_position(h in 1usize..30, w in 1usize..30, r in 1usize..8, d in 1usize..5) {
        let geom = WindowGeometry::new(h, w, r, d);
        for row in 0..h {
            for col in 0..w {
                let (win, idx) = geom.locate(row, col);
                prop_assert!(win < geom.num_windows() && idx < r * r);
                prop_assert_eq!(geom.position(win, idx), (row, col));
            }
        }
        prop_assert_eq!(geom.padding_mask().iter().filter(|p| !**p).count(), h * w);
    }
}
