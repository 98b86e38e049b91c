use std::collections::BTreeSet;

use lgseg_harness::*;
use lgseg_models::{DecoderKind, HlgConfig, SegModel, SegModelConfig, SetrConfig};
use lgseg_tensor::ParamStore;
use proptest::prelude::*;

const K: usize = 3;

fn setup(cfg: &SegModelConfig) -> (SegModel, ParamStore<f32>, Vec<SynthSegSample>) {
    let (model, store) = SegModel::build::<f32>(cfg, 1).unwrap();
    (model, store, synth_seg_dataset(6, 32, 32, K, 2).unwrap())
}

fn setr() -> SegModelConfig {
    SegModelConfig::Setr(SetrConfig::toy(DecoderKind::Pup, K))
}

fn recipe(iters: usize) -> TrainRecipe {
    let mut r = TrainRecipe::sgd_poly(0.01, iters, 4, 9);
    r.log_every = 1;
    r.eval_every = 4;
    r.augment = Some(AugmentConfig::standard((32, 32)));
    r
}

fn run(cfg: &SegModelConfig, r: &TrainRecipe) -> (String, ParamStore<f32>, TrainState<f32>) {
    let (model, mut store, corpus) = setup(cfg);
    let mut state = TrainState::new(store.len());
    let mut log = MetricsLog::in_memory();
    Trainer::new(&model, &corpus, K, r)
        .run(&mut store, &mut state, usize::MAX, &mut log)
        .unwrap();
    (log.to_text(), store, state)
}

fn stores_bit_eq(a: &ParamStore<f32>, b: &ParamStore<f32>) -> bool {
    a.entries()
        .iter()
        .zip(b.entries())
        .all(|(x, y)| x.value.bit_eq(&y.value))
}

#[test]
fn seeded_runs_are_identical() {
    for cfg in [setr(), SegModelConfig::Hlg(HlgConfig::toy(K))] {
        let r = recipe(6);
        let (log_a, store_a, state_a) = run(&cfg, &r);
        let (log_b, store_b, state_b) = run(&cfg, &r);
        assert_eq!(log_a, log_b);
        assert!(stores_bit_eq(&store_a, &store_b));
        assert!(state_a.bit_eq(&state_b));
        let records = parse_log(&log_a).unwrap();
        assert_eq!(
            records.iter().map(|r| r.step).collect::<Vec<_>>(),
            (1..=6).collect::<Vec<_>>()
        );
        assert!(records[3].metric("miou").is_some() && records[5].metric("pixel_acc").is_some());
        assert!(records[0].metric("miou").is_none());
    }
}

#[test]
fn other_seeds_differ() {
    let mut r = recipe(3);
    let (a, ..) = run(&setr(), &r);
    r.seed += 1;
    let (b, ..) = run(&setr(), &r);
    assert_ne!(a, b);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let r = recipe(8);
    let (full_log, full_store, full_state) = run(&setr(), &r);

    let (model, mut store, corpus) = setup(&setr());
    let mut state = TrainState::new(store.len());
    let mut log = MetricsLog::in_memory();
    Trainer::new(&model, &corpus, K, &r)
        .run(&mut store, &mut state, 5, &mut log)
        .unwrap();
    assert_eq!(state.step, 5);
    let (mut store2, mut state2) = (store.clone(), state.clone());
    Trainer::new(&model, &corpus, K, &r)
        .run(&mut store2, &mut state2, usize::MAX, &mut log)
        .unwrap();

    assert_eq!(log.to_text(), full_log);
    assert!(stores_bit_eq(&store2, &full_store));
    assert!(state2.bit_eq(&full_state));
}

#[test]
fn training_reduces_the_loss() {
    let mut r = recipe(30);
    r.augment = None;
    r.eval_every = 0;
    let (log, ..) = run(&setr(), &r);
    let recs = parse_log(&log).unwrap();
    let head: f64 = recs[..5].iter().map(|r| r.loss).sum();
    let tail: f64 = recs[25..].iter().map(|r| r.loss).sum();
    assert!(tail < head, "{head} -> {tail}");
    assert!(recs[0].loss > 0.5 * (K as f64).ln());
}

#[test]
fn adamw_recipe_runs_with_warmup() {
    let mut r = TrainRecipe::adamw_cosine(1e-3, 2, 4, 2, 0);
    r.log_every = 1;
    let (log, ..) = run(&setr(), &r);
    let lrs: Vec<f64> = parse_log(&log).unwrap().iter().map(|r| r.lr).collect();
    assert_eq!(lrs[0], 0.0);
    assert_eq!(lrs[2], 1e-3);
}

#[test]
fn divergence_is_reported() {
    let mut r = recipe(40);
    r.schedule = Schedule::Constant { base: 1e12 };
    r.augment = None;
    let (model, mut store, corpus) = setup(&setr());
    let mut state = TrainState::new(store.len());
    let err = Trainer::new(&model, &corpus, K, &r)
        .run(&mut store, &mut state, usize::MAX, &mut MetricsLog::in_memory())
        .unwrap_err();
    assert!(matches!(err, HarnessError::Divergence { .. }), "{err}");
}

#[test]
fn bad_recipes_are_rejected() {
    let (model, mut store, corpus) = setup(&setr());
    let mut state = TrainState::new(store.len());
    let mut r = recipe(4);
    r.batch = 0;
    assert!(Trainer::new(&model, &corpus, K, &r)
        .run(&mut store, &mut state, 4, &mut MetricsLog::in_memory())
        .is_err());
    let r = recipe(4);
    let empty = Trainer::new(&model, &[], K, &r);
    assert!(empty
        .run(&mut store, &mut state, 4, &mut MetricsLog::in_memory())
        .is_err());
}

#[test]
fn batches_cover_each_epoch_exactly_once() {
    let (n, batch) = (10, 4);
    let all: Vec<usize> = (0..5).flat_map(|s| batch_indices(3, s, batch, n)).collect();
    for epoch in all.chunks(n) {
        assert_eq!(epoch.iter().copied().collect::<BTreeSet<_>>(), (0..n).collect());
    }
    assert_ne!(all[..n], all[n..2 * n]);
    assert_eq!(batch_indices(3, 2, batch, n), batch_indices(3, 2, batch, n));
}

#[test]
fn direct_and_full_window_evaluation_agree() {
    let (model, store, corpus) = setup(&setr());
    let a = evaluate(&model, &store, &corpus, K, InferMode::Direct, 4).unwrap();
    let sliding = InferMode::Sliding {
        window: (32, 32),
        stride: (16, 16),
    };
    let b = evaluate(&model, &store, &corpus, K, sliding, 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.predictions.len(), corpus.len());
}

#[test]
fn log_lines_have_documented_layout() {
    let r = Record {
        step: 12,
        loss: 0.5,
        lr: 1e-3,
        metrics: vec![("miou".into(), 0.25)],
    };
    assert_eq!(r.to_string(), "step=12 loss=0.5 lr=0.001 miou=0.25");
    assert!("step=1 loss=x lr=0".parse::<Record>().is_err());
    assert!("loss=1 step=1 lr=0".parse::<Record>().is_err());
    assert!(parse_log("step=1 loss=1 lr=0\nbogus\n")
        .unwrap_err()
        .starts_with("line 2"));
}

#[test]
fn log_file_is_appended() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.log");
    for step in 1..=2 {
        let mut log = MetricsLog::append_to(&path).unwrap();
        log.push(Record {
            step,
            loss: 1.0,
            lr: 0.0,
            metrics: vec![],
        })
        .unwrap();
    }
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(parse_log(&text).unwrap().len(), 2);
}

proptest! {
    #[test]
    fn records_roundtrip_bit_exactly(step in 0usize..1_000_000, loss in any::<f64>(), lr in 0f64..1.0, m in -1e9f64..1e9) {
        prop_assume!(loss.is_finite());
        let r = Record { step, loss, lr, metrics: vec![("pixel_acc".into(), m)] };
        let back: Record = r.to_string().parse().unwrap();
        prop_assert_eq!(back.loss.to_bits(), loss.to_bits());
        prop_assert_eq!(back, r);
    }
}
