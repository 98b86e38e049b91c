//! Finite-difference sweep over every differentiable op on random small inputs.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::check;
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::ops::conv::Conv2dSpec;
use crate::ops::spatial::{Pool2dSpec, PoolMode};
use crate::tensor::Tensor;

type Forward = Box<dyn for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>>;

/// One op's inputs and forward closure for a single random instance.
pub struct Instance {
    pub inputs: Vec<Tensor<f64>>,
    pub train: bool,
    pub forward: Forward,
}

/// Worst relative error seen for one op across its instances.
#[derive(Debug, Clone)]
pub struct OpReport {
    pub op: &'static str,
    pub instances: usize,
    pub worst_rel_error: f64,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

/// Values bounded away from zero, for kinked ops.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    uniform(rng, shape).map(|v| v.signum() * (0.1 + v.abs()))
}

/// Distinct values spaced 0.05 apart in random order, so no max ties within `h`.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - 1.0).collect();
    v.shuffle(rng);
    Tensor::from_vec(shape, v).expect("shape")
}

fn plain(inputs: Vec<Tensor<f64>>, forward: Forward) -> Instance {
    Instance {
        inputs,
        train: false,
        forward,
    }
}

type Builder = fn(&mut ChaCha8Rng) -> Instance;

/// Every op covered by the sweep with its instance generator.
pub fn cases() -> Vec<(&'static str, Builder)> {
    vec![
        ("add", |r| {
            plain(
                vec![uniform(r, &[3, 4]), uniform(r, &[3, 4])],
                Box::new(|_, x| x[0].add(&x[1])),
            )
        }),
        ("sub", |r| {
            plain(
                vec![uniform(r, &[3, 4]), uniform(r, &[3, 4])],
                Box::new(|_, x| x[0].sub(&x[1])),
            )
        }),
        ("mul", |r| {
            plain(
                vec![uniform(r, &[3, 4]), uniform(r, &[3, 4])],
                Box::new(|_, x| x[0].mul(&x[1])),
            )
        }),
        ("add_scalar", |r| {
            let c = r.gen_range(-2.0..2.0);
            plain(vec![uniform(r, &[2, 5])], Box::new(move |_, x| x[0].add_scalar(c)))
        }),
        ("mul_scalar", |r| {
            let c = r.gen_range(-2.0..2.0);
            plain(vec![uniform(r, &[2, 5])], Box::new(move |_, x| x[0].mul_scalar(c)))
        }),
        ("neg", |r| plain(vec![uniform(r, &[7])], Box::new(|_, x| x[0].neg()))),
        ("add_bias", |r| {
            plain(
                vec![uniform(r, &[2, 3, 4]), uniform(r, &[4])],
                Box::new(|_, x| x[0].add_bias(&x[1])),
            )
        }),
        ("channel_scale", |r| {
            plain(
                vec![uniform(r, &[2, 2, 2, 3]), uniform(r, &[2, 3])],
                Box::new(|_, x| x[0].channel_scale(&x[1])),
            )
        }),
        ("sum", |r| plain(vec![uniform(r, &[3, 4])], Box::new(|_, x| x[0].sum()))),
        ("mean", |r| {
            plain(vec![uniform(r, &[3, 4])], Box::new(|_, x| x[0].mean()))
        }),
        ("matmul", |r| {
            plain(
                vec![uniform(r, &[3, 4]), uniform(r, &[4, 2])],
                Box::new(|_, x| x[0].matmul(&x[1])),
            )
        }),
        ("bmm", |r| {
            plain(
                vec![uniform(r, &[2, 3, 4]), uniform(r, &[2, 4, 2])],
                Box::new(|_, x| x[0].bmm(&x[1], false)),
            )
        }),
        ("bmm_transposed", |r| {
            plain(
                vec![uniform(r, &[2, 3, 4]), uniform(r, &[2, 2, 4])],
                Box::new(|_, x| x[0].bmm(&x[1], true)),
            )
        }),
        ("linear", |r| {
            plain(
                vec![uniform(r, &[2, 3, 4]), uniform(r, &[4, 3]), uniform(r, &[3])],
                Box::new(|_, x| x[0].linear(&x[1], Some(&x[2]))),
            )
        }),
        ("reshape", |r| {
            plain(vec![uniform(r, &[2, 6])], Box::new(|_, x| x[0].reshape(&[3, 2, 2])))
        }),
        ("permute", |r| {
            let mut axes = vec![0, 1, 2];
            axes.shuffle(r);
            plain(vec![uniform(r, &[2, 3, 4])], Box::new(move |_, x| x[0].permute(&axes)))
        }),
        ("transpose", |r| {
            plain(vec![uniform(r, &[2, 3, 4])], Box::new(|_, x| x[0].transpose()))
        }),
        ("slice", |r| {
            let axis = r.gen_range(0..3);
            let start = r.gen_range(0..2);
            plain(
                vec![uniform(r, &[3, 3, 3])],
                Box::new(move |_, x| x[0].slice(axis, start, 2)),
            )
        }),
        ("concat", |r| {
            let axis = r.gen_range(0..2);
            let (a, b) = if axis == 0 { ([2, 3], [1, 3]) } else { ([2, 3], [2, 2]) };
            plain(
                vec![uniform(r, &a), uniform(r, &b)],
                Box::new(move |g, x| g.concat(x, axis)),
            )
        }),
        ("gather_rows", |r| {
            let idx: Arc<[Option<usize>]> = (0..6)
                .map(|_| if r.gen_bool(0.2) { None } else { Some(r.gen_range(0..4)) })
                .collect();
            plain(
                vec![uniform(r, &[4, 3])],
                Box::new(move |_, x| x[0].gather_rows(idx.clone())),
            )
        }),
        ("relu", |r| {
            plain(vec![off_zero(r, &[3, 5])], Box::new(|_, x| x[0].relu()))
        }),
        ("gelu", |r| {
            plain(vec![uniform(r, &[3, 5]).map(|v| 3.0 * v)], Box::new(|_, x| x[0].gelu()))
        }),
        ("sigmoid", |r| {
            plain(
                vec![uniform(r, &[3, 5]).map(|v| 3.0 * v)],
                Box::new(|_, x| x[0].sigmoid()),
            )
        }),
        ("softmax", |r| {
            let axis = r.gen_range(0..3);
            plain(
                vec![uniform(r, &[2, 3, 4]).map(|v| 2.0 * v)],
                Box::new(move |_, x| x[0].softmax(axis)),
            )
        }),
        ("dropout", |r| Instance {
            inputs: vec![uniform(r, &[4, 6])],
            train: true,
            forward: Box::new(|_, x| x[0].dropout(0.3)),
        }),
        ("drop_path", |r| Instance {
            inputs: vec![uniform(r, &[6, 2, 3])],
            train: true,
            forward: Box::new(|_, x| x[0].drop_path(0.4)),
        }),
        ("layer_norm", |r| {
            plain(
                vec![uniform(r, &[3, 5]), uniform(r, &[5]), uniform(r, &[5])],
                Box::new(|_, x| x[0].layer_norm(&x[1], &x[2], 1e-5)),
            )
        }),
        ("batch_norm_train", |r| Instance {
            inputs: vec![uniform(r, &[2, 2, 2, 3]), uniform(r, &[3]), uniform(r, &[3])],
            train: true,
            forward: Box::new(|_, x| {
                let (rm, rv) = (Tensor::zeros(&[3]), Tensor::ones(&[3]));
                Ok(x[0].batch_norm(&x[1], &x[2], &rm, &rv, 0.1, 1e-5)?.0)
            }),
        }),
        ("batch_norm_eval", |r| {
            let rm = uniform(r, &[3]);
            let rv = uniform(r, &[3]).map(|v| 1.0 + 0.5 * v);
            plain(
                vec![uniform(r, &[2, 2, 2, 3]), uniform(r, &[3]), uniform(r, &[3])],
                Box::new(move |_, x| Ok(x[0].batch_norm(&x[1], &x[2], &rm, &rv, 0.1, 1e-5)?.0)),
            )
        }),
        ("conv2d", |r| {
            plain(
                vec![uniform(r, &[1, 4, 4, 2]), uniform(r, &[3, 3, 2, 3])],
                Box::new(|_, x| x[0].conv2d(&x[1], Conv2dSpec::new(1, 1, 1))),
            )
        }),
        ("conv2d_strided", |r| {
            plain(
                vec![uniform(r, &[2, 5, 5, 1]), uniform(r, &[3, 3, 1, 2])],
                Box::new(|_, x| x[0].conv2d(&x[1], Conv2dSpec::new(2, 1, 1))),
            )
        }),
        ("conv2d_grouped", |r| {
            plain(
                vec![uniform(r, &[1, 3, 3, 4]), uniform(r, &[3, 3, 2, 2])],
                Box::new(|_, x| x[0].conv2d(&x[1], Conv2dSpec::new(1, 1, 2))),
            )
        }),
        ("conv2d_depthwise", |r| {
            let stride = r.gen_range(1..3);
            plain(
                vec![uniform(r, &[1, 4, 4, 3]), uniform(r, &[3, 3, 1, 3])],
                Box::new(move |_, x| x[0].conv2d(&x[1], Conv2dSpec::new(stride, 1, 3))),
            )
        }),
        ("conv2d_pointwise", |r| {
            plain(
                vec![uniform(r, &[2, 3, 3, 3]), uniform(r, &[1, 1, 3, 2])],
                Box::new(|_, x| x[0].conv2d(&x[1], Conv2dSpec::new(1, 0, 1))),
            )
        }),
        ("bilinear_resize", |r| {
            let (oh, ow) = (r.gen_range(2..7), r.gen_range(2..7));
            plain(
                vec![uniform(r, &[1, 3, 3, 2])],
                Box::new(move |_, x| x[0].bilinear_resize(oh, ow)),
            )
        }),
        ("avg_pool", |r| {
            let (k, s) = if r.gen_bool(0.5) { (2, 2) } else { (3, 2) };
            plain(
                vec![uniform(r, &[1, 5, 5, 2])],
                Box::new(move |_, x| x[0].pool2d(Pool2dSpec::square(k, s, PoolMode::Avg))),
            )
        }),
        ("max_pool", |r| {
            plain(
                vec![distinct(r, &[1, 4, 4, 2])],
                Box::new(|_, x| x[0].pool2d(Pool2dSpec::square(2, 2, PoolMode::Max))),
            )
        }),
        ("global_avg_pool", |r| {
            plain(vec![uniform(r, &[2, 3, 3, 2])], Box::new(|_, x| x[0].global_avg_pool()))
        }),
        ("cross_entropy", |r| {
            let mut labels: Vec<usize> = (0..5).map(|_| r.gen_range(0..4)).collect();
            labels[r.gen_range(0..5)] = 255;
            plain(
                vec![uniform(r, &[5, 4]).map(|v| 2.0 * v)],
                Box::new(move |_, x| x[0].cross_entropy(&labels, Some(255))),
            )
        }),
    ]
}

/// Runs `instances` random checks per op with `h = 1e-4`.
pub fn run(instances: usize, seed: u64) -> Result<Vec<OpReport>> {
    let mut reports = Vec::new();
    for (i, (op, build)) in cases().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64 * 7919));
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let inst = build(&mut rng);
            let res = check(&inst.inputs, 1e-4, inst.train, &inst.forward)?;
            worst = worst.max(res.max_rel_error());
        }
        reports.push(OpReport {
            op,
            instances,
            worst_rel_error: worst,
        });
    }
    Ok(reports)
}
