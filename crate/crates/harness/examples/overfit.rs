//! Toy overfit calibration: `cargo run --release -p lgseg-harness --example overfit -- <setr|hlg> <sgd|adamw> <lr> <iters> <batch>`
use std::time::Instant;

use lgseg_harness::*;
use lgseg_models::{DecoderKind, HlgConfig, SegModel, SegModelConfig, SetrConfig};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let k = 4;
    let cfg = match arg(0, "setr").as_str() {
        "hlg" => SegModelConfig::Hlg(HlgConfig::toy(k)),
        _ => SegModelConfig::Setr(SetrConfig::toy(DecoderKind::Pup, k)),
    };
    let lr: f64 = arg(2, "0.01").parse().unwrap();
    let iters: usize = arg(3, "2000").parse().unwrap();
    let batch: usize = arg(4, "8").parse().unwrap();
    let mut recipe = match arg(1, "sgd").as_str() {
        "adamw" => {
            let mut r = TrainRecipe::adamw_cosine(lr, iters / 20, iters, batch, 0);
            r.optimizer = OptimizerKind::AdamW {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                weight_decay: 0.0,
            };
            r
        }
        _ => TrainRecipe::sgd_poly(lr, iters, batch, 0),
    };
    recipe.log_every = 1;
    recipe.eval_every = 250;
    let corpus = synth_seg_dataset(16, 64, 64, k, 0).unwrap();
    let (model, mut store) = SegModel::build::<f32>(&cfg, 0).unwrap();
    let mut state = TrainState::new(store.len());
    let mut log = MetricsLog::in_memory();
    let t = Instant::now();
    Trainer::new(&model, &corpus, k, &recipe)
        .run(&mut store, &mut state, usize::MAX, &mut log)
        .unwrap();
    for r in log.records() {
        println!("{r}");
    }
    println!("elapsed {:?}", t.elapsed());
}
