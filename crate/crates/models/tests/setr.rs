mod common;

use lgseg_models::setr::{Decoder, MlaHead, SetrEncoder, TokenSequence};
use lgseg_models::{DecoderKind, Setr, SetrBackbone, SetrConfig};
use lgseg_tensor::{Graph, GraphOptions, ParamBuilder, ParamId, ParamStore, Tensor};
use rand::seq::SliceRandom;

fn randomize(store: &mut ParamStore<f64>, seed: u64, scale: f64) {
    let mut rng = common::rng(seed);
    let ids: Vec<ParamId> = store.ids().filter(|&id| store.entry(id).trainable).collect();
    for id in ids {
        let shape = store.get(id).shape().to_vec();
        store.set(id, common::uniform(&mut rng, &shape, scale)).unwrap();
    }
}

fn zeroed(cfg: &SetrConfig) -> (Setr, ParamStore<f32>) {
    let mut b = ParamBuilder::zero_filled();
    let m = Setr::new(&mut b, cfg).unwrap();
    (m, b.finish())
}

#[test]
fn base_encoder_keeps_grid_across_all_layers() {
    let cfg = SetrConfig::named(DecoderKind::Naive, SetrBackbone::TBase);
    let mut b = ParamBuilder::<f32>::zero_filled();
    let enc = SetrEncoder::new(&mut b, &cfg.encoder);
    let store = b.finish();
    let g = Graph::new(&store, GraphOptions::eval());
    let x = g.input(Tensor::<f32>::ones(&[1, 32, 32, 3]), false);
    let outs = enc.encode(&g, &x).unwrap();
    assert_eq!(outs.len(), 12);
    for z in &outs {
        assert_eq!(z.tokens.shape(), &[1, 4, 768]);
        assert_eq!(z.grid, (2, 2));
    }
}

#[test]
fn large_encoder_has_24_layers_of_width_1024() {
    let cfg = SetrConfig::named(DecoderKind::Naive, SetrBackbone::TLarge);
    assert_eq!(
        (cfg.encoder.layers, cfg.encoder.hidden, cfg.encoder.heads),
        (24, 1024, 16)
    );
    let mut b = ParamBuilder::<f32>::zero_filled();
    let enc = SetrEncoder::new(&mut b, &cfg.encoder);
    assert_eq!(enc.layers.len(), 24);
    assert!(enc.layers.iter().all(|l| l.qkv.cin == 1024 && l.heads == 16));
}

#[test]
fn sequentialization_matches_patch_oracle() {
    let cfg = SetrConfig::toy(DecoderKind::Naive, 3);
    let (model, mut store) = Setr::build::<f64>(&cfg, 1).unwrap();
    randomize(&mut store, 2, 0.5);
    let g = Graph::new(&store, GraphOptions::eval());
    let img = common::uniform::<f64>(&mut common::rng(3), &[1, 16, 24, 3], 1.0);
    let seq = model.encoder.sequentialize(&g, &g.input(img.clone(), false)).unwrap();
    assert_eq!(seq.grid, (2, 3));
    let (p, c) = (8, 64);
    let w = store.get(model.encoder.patch_proj).to_f64_vec();
    let bias = store.get(model.encoder.patch_bias).to_f64_vec();
    for i in 0..6 {
        let (pr, pc) = (i / 3, i % 3);
        let mut flat = Vec::with_capacity(p * p * 3);
        for r in 0..p {
            for col in 0..p {
                for ch in 0..3 {
                    flat.push(img.data()[((pr * p + r) * 24 + pc * p + col) * 3 + ch]);
                }
            }
        }
        let want = common::linear(&flat, p * p * 3, &w, Some(&bias));
        let got = &seq.tokens.value().data()[i * c..(i + 1) * c];
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10);
        }
    }
    let g2 = Graph::new(&store, GraphOptions::eval());
    assert!(model
        .encoder
        .sequentialize(&g2, &g2.input(Tensor::zeros(&[1, 12, 16, 3]), false))
        .is_err());
}

#[test]
fn token_map_roundtrip_and_index_placement() {
    let g = Graph::<f64>::standalone(GraphOptions::eval());
    let data: Vec<f64> = (0..900 * 2).map(|v| v as f64).collect();
    let seq = TokenSequence {
        tokens: g.input(Tensor::from_f64(&[1, 900, 2], &data).unwrap(), false),
        grid: (30, 30),
    };
    let map = seq.to_map().unwrap();
    assert_eq!(map.shape(), &[1, 30, 30, 2]);
    for i in [0, 31, 457, 899] {
        let (r, c) = (i / 30, i % 30);
        assert_eq!(map.value().data()[(r * 30 + c) * 2], (2 * i) as f64);
    }
    let back = TokenSequence::from_map(&map).unwrap();
    assert!(back.tokens.value().bit_eq(seq.tokens.value()));
}

#[test]
fn positions_identity_on_native_grid() {
    let cfg = SetrConfig::toy(DecoderKind::Naive, 3);
    let (model, mut store) = Setr::build::<f32>(&cfg, 1).unwrap();
    store
        .set(
            model.encoder.positions,
            common::uniform(&mut common::rng(4), &[64, 64], 1.0),
        )
        .unwrap();
    let g = Graph::new(&store, GraphOptions::eval());
    let t = model.encoder.positions_at(&g, (8, 8)).unwrap();
    assert!(t.value().bit_eq(store.get(model.encoder.positions)));
    assert_eq!(model.encoder.positions_at(&g, (4, 6)).unwrap().shape(), &[24, 64]);
}

#[test]
fn one_layer_encoder_is_one_layer_application() {
    let mut cfg = SetrConfig::toy(DecoderKind::Naive, 3);
    cfg.encoder.layers = 1;
    let (model, mut store) = Setr::build::<f64>(&cfg, 5).unwrap();
    randomize(&mut store, 6, 0.3);
    let g = Graph::new(&store, GraphOptions::eval());
    let x = g.input(common::uniform(&mut common::rng(7), &[2, 64, 64, 3], 1.0), false);
    let outs = model.encoder.encode(&g, &x).unwrap();
    let seq = model
        .encoder
        .add_positions(&g, &model.encoder.sequentialize(&g, &x).unwrap())
        .unwrap();
    let direct = model.encoder.layers[0].forward(&g, &seq.tokens).unwrap();
    assert_eq!(outs.len(), 1);
    assert!(outs[0].tokens.value().bit_eq(direct.value()));
}

#[test]
fn layer_is_permutation_equivariant_without_positions() {
    let cfg = SetrConfig::toy(DecoderKind::Naive, 3);
    let (model, store) = Setr::build::<f32>(&cfg, 8).unwrap();
    let g = Graph::new(&store, GraphOptions::eval());
    let mut rng = common::rng(9);
    let x = common::uniform::<f32>(&mut rng, &[1, 16, 64], 1.0);
    let mut perm: Vec<usize> = (0..16).collect();
    perm.shuffle(&mut rng);
    let permute = |t: &Tensor<f32>| {
        let d = t.data();
        let out: Vec<f32> = perm.iter().flat_map(|&i| d[i * 64..(i + 1) * 64].to_vec()).collect();
        Tensor::from_vec(&[1, 16, 64], out).unwrap()
    };
    let layer = &model.encoder.layers[0];
    let y = layer.forward(&g, &g.input(x.clone(), false)).unwrap();
    let yp = layer.forward(&g, &g.input(permute(&x), false)).unwrap();
    assert!(permute(y.value()).max_abs_diff(yp.value()) <= 1e-5);
}

#[test]
fn all_decoders_return_input_resolution() {
    for kind in [DecoderKind::Naive, DecoderKind::Pup, DecoderKind::Mla] {
        let cfg = SetrConfig::toy(kind, 4);
        let (model, store) = Setr::build::<f32>(&cfg, 10).unwrap();
        let g = Graph::new(&store, GraphOptions::eval());
        for (h, w) in [(64, 64), (48, 80), (8, 8)] {
            let x = g.input(common::uniform(&mut common::rng(11), &[2, h, w, 3], 1.0), false);
            let out = model.forward(&g, &x).unwrap();
            assert_eq!(out.logits.shape(), &[2, h, w, 4], "{kind:?} at {h}x{w}");
        }
    }
}

#[test]
fn named_decoders_and_aux_heads_at_base_scale() {
    for (kind, aux) in [(DecoderKind::Naive, 3), (DecoderKind::Pup, 4), (DecoderKind::Mla, 4)] {
        let cfg = SetrConfig::named(kind, SetrBackbone::TBase);
        let (model, store) = zeroed(&cfg);
        let g = Graph::new(&store, GraphOptions::eval());
        let x = g.input(Tensor::<f32>::ones(&[1, 64, 48, 3]), false);
        let out = model.forward(&g, &x).unwrap();
        assert_eq!(out.logits.shape(), &[1, 64, 48, 19]);
        assert_eq!(out.aux.len(), aux);
        for a in &out.aux {
            assert_eq!(a.shape(), &[1, 64, 48, 19]);
        }
    }
    let pup = SetrConfig::named(DecoderKind::Pup, SetrBackbone::TLarge);
    assert_eq!(pup.decoder.aux_taps, vec![10, 15, 20, 24]);
    assert_eq!(
        SetrConfig::named(DecoderKind::Mla, SetrBackbone::TLarge)
            .decoder
            .mla_taps,
        vec![6, 12, 18, 24]
    );
    assert_eq!(
        SetrConfig::named(DecoderKind::Naive, SetrBackbone::TLarge)
            .decoder
            .aux_taps,
        vec![10, 15, 20]
    );
}

#[test]
fn pup_stages_double_resolution_each_time() {
    let cfg = SetrConfig::named(DecoderKind::Pup, SetrBackbone::TBase);
    let (model, store) = zeroed(&cfg);
    let Decoder::Pup(head) = &model.decoder else {
        panic!("expected PUP")
    };
    assert_eq!(head.stages.len(), 4);
    let g = Graph::new(&store, GraphOptions::eval());
    let map = g.input(Tensor::<f32>::ones(&[1, 4, 6, 768]), false);
    let sizes: Vec<(usize, usize)> = head
        .forward_stages(&g, &map)
        .unwrap()
        .iter()
        .map(|s| (s.shape()[1], s.shape()[2]))
        .collect();
    assert_eq!(sizes, vec![(8, 12), (16, 24), (32, 48), (64, 96)]);
}

#[test]
fn pup_keeps_constant_maps_constant() {
    let cfg = SetrConfig::toy(DecoderKind::Pup, 2);
    let (model, mut store) = Setr::build::<f64>(&cfg, 12).unwrap();
    let Decoder::Pup(head) = &model.decoder else {
        panic!("expected PUP")
    };
    let st = &head.stages[0];
    let (cin, cout) = (st.conv.cin, st.conv.cout);
    let avg = vec![1.0 / (9 * cin) as f64; 9 * cin * cout];
    store
        .set(st.conv.kernel, Tensor::from_f64(&[3, 3, cin, cout], &avg).unwrap())
        .unwrap();
    let g = Graph::new(&store, GraphOptions::eval());
    let map = g.input(Tensor::<f64>::full(&[1, 8, 8, 64], 0.5), false);
    let up = &head.forward_stages(&g, &map).unwrap()[0];
    assert_eq!(up.shape(), &[1, 16, 16, cout]);
    // zero padding only disturbs the outermost ring
    let want = 0.5 / (1.0f64 + 1e-5).sqrt();
    for r in 4..12 {
        for c in 4..12 {
            for ch in 0..cout {
                assert!((up.value().data()[(r * 16 + c) * cout + ch] - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn naive_head_matches_hand_composition() {
    let mut cfg = SetrConfig::toy(DecoderKind::Naive, 3);
    cfg.encoder.native_grid = (4, 4);
    let (model, mut store) = Setr::build::<f64>(&cfg, 13).unwrap();
    randomize(&mut store, 14, 0.4);
    let Decoder::Naive(head) = &model.decoder else {
        panic!("expected naive")
    };
    let g = Graph::new(&store, GraphOptions::eval());
    let map = common::uniform::<f64>(&mut common::rng(15), &[1, 4, 4, 64], 1.0);
    let got = head.forward(&g, &g.input(map.clone(), false), (32, 32)).unwrap();

    let p = |id| store.get(id).to_f64_vec();
    let k1 = p(head.hidden.conv.kernel);
    let y = common::linear(map.data(), 64, &k1, None);
    let (gm, bt, rm, rv) = (
        p(head.hidden.bn.gamma),
        p(head.hidden.bn.beta),
        p(head.hidden.bn.running_mean),
        p(head.hidden.bn.running_var),
    );
    let y: Vec<f64> = y
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let c = i % 64;
            ((v - rm[c]) / (rv[c] + 1e-5).sqrt() * gm[c] + bt[c]).max(0.0)
        })
        .collect();
    let y = common::linear(&y, 64, &p(head.classify.kernel), Some(&p(head.classify.bias.unwrap())));
    let gg = Graph::standalone(GraphOptions::eval());
    let small = gg.input(Tensor::from_f64(&[1, 4, 4, 3], &y).unwrap(), false);
    let want = small.bilinear_resize(32, 32).unwrap();
    assert!(got.value().max_abs_diff(want.value()) <= 1e-10);
}

#[test]
fn naive_with_zero_classifier_gives_bias_map() {
    let cfg = SetrConfig::toy(DecoderKind::Naive, 1);
    let (model, mut store) = Setr::build::<f64>(&cfg, 16).unwrap();
    let Decoder::Naive(head) = &model.decoder else {
        panic!("expected naive")
    };
    store
        .set(head.classify.bias.unwrap(), Tensor::full(&[1], 0.25))
        .unwrap();
    store.set(head.classify.kernel, Tensor::zeros(&[1, 1, 64, 1])).unwrap();
    let g = Graph::new(&store, GraphOptions::eval());
    let x = g.input(common::uniform(&mut common::rng(17), &[1, 32, 32, 3], 1.0), false);
    let out = model.forward(&g, &x).unwrap();
    assert!(out.logits.value().data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
}

#[test]
fn aux_head_with_zero_weights_is_constant() {
    let mut cfg = SetrConfig::toy(DecoderKind::Pup, 2);
    cfg.decoder.aux_taps = vec![1];
    let (model, mut store) = Setr::build::<f64>(&cfg, 18).unwrap();
    let aux = &model.aux[0];
    store.set(aux.classify.kernel, Tensor::zeros(&[1, 1, 32, 2])).unwrap();
    store
        .set(
            aux.classify.bias.unwrap(),
            Tensor::from_f64(&[2], &[0.5, -1.0]).unwrap(),
        )
        .unwrap();
    let g = Graph::new(&store, GraphOptions::eval());
    let x = g.input(common::uniform(&mut common::rng(19), &[1, 32, 32, 3], 1.0), false);
    let out = model.forward(&g, &x).unwrap();
    for px in out.aux[0].value().data().chunks_exact(2) {
        assert_eq!(px, &[0.5, -1.0]);
    }
}

#[test]
fn mla_streams_are_symmetric_without_top_down() {
    let mut cfg = SetrConfig::toy(DecoderKind::Mla, 3);
    cfg.encoder.layers = 4;
    cfg.decoder.mla_taps = vec![1, 2, 3, 4];
    cfg.decoder.mla_top_down = false;
    let (model, mut store) = Setr::build::<f64>(&cfg, 20).unwrap();
    randomize(&mut store, 21, 0.3);
    let Decoder::Mla(head) = &model.decoder else {
        panic!("expected MLA")
    };
    let first = &head.streams[0];
    let copies: Vec<(ParamId, ParamId)> = head.streams[1..]
        .iter()
        .flat_map(|s| {
            [
                (&first.lateral, &s.lateral),
                (&first.conv_a, &s.conv_a),
                (&first.conv_b, &s.conv_b),
            ]
            .into_iter()
            .flat_map(|(a, b)| {
                [
                    (a.conv.kernel, b.conv.kernel),
                    (a.bn.gamma, b.bn.gamma),
                    (a.bn.beta, b.bn.beta),
                ]
            })
            .collect::<Vec<_>>()
        })
        .collect();
    for (src, dst) in copies {
        let v = store.get(src).clone();
        store.set(dst, v).unwrap();
    }
    let g = Graph::new(&store, GraphOptions::eval());
    let tap = g.input(common::uniform(&mut common::rng(22), &[1, 4, 4, 64], 1.0), false);
    let outs = head
        .forward_streams(&g, &[tap.clone(), tap.clone(), tap.clone(), tap])
        .unwrap();
    for o in &outs[1..] {
        assert!(o.value().max_abs_diff(outs[0].value()) <= 1e-6);
    }
    assert_eq!(head.classify.cin, 4 * cfg.decoder.mla_out_channels);
}

#[test]
fn mla_single_stream_has_no_aggregation() {
    let mut cfg = SetrConfig::toy(DecoderKind::Mla, 3);
    cfg.decoder.mla_taps = vec![2];
    let (model, _) = Setr::build::<f32>(&cfg, 23).unwrap();
    let Decoder::Mla(head) = &model.decoder else {
        panic!("expected MLA")
    };
    assert_eq!(head.streams.len(), 1);
    assert!(head.streams[0].fuse.is_none());
}

#[test]
fn named_mla_concat_width() {
    let cfg = SetrConfig::named(DecoderKind::Mla, SetrBackbone::TLarge);
    let mut b = ParamBuilder::<f32>::zero_filled();
    let head = MlaHead::new(&mut b, 1024, &cfg.decoder, 16);
    assert_eq!(head.classify.cin, 4 * 128);
    assert_eq!(head.streams.iter().filter(|s| s.fuse.is_some()).count(), 3);
}

#[test]
fn gradient_reaches_every_tap() {
    let mut cfg = SetrConfig::toy(DecoderKind::Mla, 3);
    cfg.encoder.layers = 4;
    cfg.decoder.mla_taps = vec![1, 2, 3, 4];
    let (model, store) = Setr::build::<f64>(&cfg, 24).unwrap();
    let Decoder::Mla(head) = &model.decoder else {
        panic!("expected MLA")
    };
    let g = Graph::new(&store, GraphOptions::eval_recording());
    let mut rng = common::rng(25);
    let taps: Vec<_> = (0..4)
        .map(|_| g.input(common::uniform(&mut rng, &[1, 4, 4, 64], 1.0), true))
        .collect();
    let out = head.forward(&g, &taps).unwrap();
    let w = g.constant(common::uniform(&mut rng, out.shape(), 1.0));
    g.backward(&out.mul(&w).unwrap().sum().unwrap()).unwrap();
    for (i, t) in taps.iter().enumerate() {
        let gr = g.grad(t).expect("tap gradient");
        let norm: f64 = gr.data().iter().map(|v| v * v).sum();
        assert!(norm > 0.0, "tap {} has zero gradient", i + 1);
    }

    let g = Graph::new(&store, GraphOptions::eval_recording());
    let x = g.input(common::uniform(&mut rng, &[1, 32, 32, 3], 1.0), false);
    let out = model.forward(&g, &x).unwrap();
    g.backward(
        &out.logits
            .mul(&g.constant(common::uniform(&mut rng, out.logits.shape(), 1.0)))
            .unwrap()
            .sum()
            .unwrap(),
    )
    .unwrap();
    let grads = g.param_grads();
    for (l, layer) in model.encoder.layers.iter().enumerate() {
        let gr = grads[layer.fc2.weight.0].as_ref().expect("layer gradient");
        assert!(
            gr.data().iter().any(|&v| v != 0.0),
            "layer {} receives no gradient",
            l + 1
        );
    }
}

#[test]
fn rejects_invalid_taps_and_patches() {
    let mut cfg = SetrConfig::toy(DecoderKind::Pup, 2);
    cfg.decoder.aux_taps = vec![3];
    assert!(Setr::build::<f32>(&cfg, 0).is_err());
    let mut cfg = SetrConfig::toy(DecoderKind::Mla, 2);
    cfg.decoder.mla_taps = vec![0];
    assert!(Setr::build::<f32>(&cfg, 0).is_err());
    let mut cfg = SetrConfig::toy(DecoderKind::Pup, 2);
    cfg.encoder.patch = 6;
    assert!(Setr::build::<f32>(&cfg, 0).is_err());
}
