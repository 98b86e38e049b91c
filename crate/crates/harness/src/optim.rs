use std::f64::consts::PI;

use lgseg_tensor::{Float, ParamStore, Tensor};

use crate::error::{invalid, Result};

/// Learning rate as a function of the completed-step count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant {
        base: f64,
    },
    /// `base · (1 − t / max_iters)^power`, zero from `max_iters` on.
    Poly {
        base: f64,
        max_iters: usize,
        power: f64,
    },
    /// Linear ramp from 0 to `base` over `warmup` steps, then half-cosine to `floor` at `total`.
    WarmupCosine {
        base: f64,
        warmup: usize,
        total: usize,
        floor: f64,
    },
}

impl Schedule {
    pub fn poly(base: f64, max_iters: usize) -> Self {
        Schedule::Poly {
            base,
            max_iters,
            power: 0.9,
        }
    }

    pub fn lr(&self, t: usize) -> f64 {
        match *self {
            Schedule::Constant { base } => base,
            Schedule::Poly { base, max_iters, power } => {
                if t >= max_iters {
                    0.0
                } else {
                    base * (1.0 - t as f64 / max_iters as f64).powf(power)
                }
            }
            Schedule::WarmupCosine {
                base,
                warmup,
                total,
                floor,
            } => {
                if t < warmup {
                    base * t as f64 / warmup as f64
                } else if t >= total {
                    floor
                } else {
                    let progress = (t - warmup) as f64 / (total - warmup) as f64;
                    floor + (base - floor) * 0.5 * (1.0 + (PI * progress).cos())
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::Constant { base } if base >= 0.0 => Ok(()),
            Schedule::Poly { base, max_iters, power } if base >= 0.0 && max_iters > 0 && power > 0.0 => Ok(()),
            Schedule::WarmupCosine {
                base,
                warmup,
                total,
                floor,
            } if base >= 0.0 && floor >= 0.0 && warmup < total => Ok(()),
            s => Err(invalid(format!("invalid schedule {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    /// Heavy-ball momentum; the buffer starts as the first gradient.
    Sgd { momentum: f64, weight_decay: f64 },
    /// Adam with decoupled weight decay and bias correction.
    AdamW {
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    },
}

impl OptimizerKind {
    /// Segmentation recipe: momentum 0.9, no weight decay.
    pub fn sgd() -> Self {
        OptimizerKind::Sgd {
            momentum: 0.9,
            weight_decay: 0.0,
        }
    }

    /// Classification recipe: weight decay 0.05.
    pub fn adamw() -> Self {
        OptimizerKind::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// Step counter, last learning rate and per-parameter moments.
///
/// `first` is the SGD momentum buffer or the Adam first moment; `second` is
/// only used by AdamW. Both are indexed by [`lgseg_tensor::ParamId`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T: Float> {
    pub step: usize,
    pub lr: f64,
    pub first: Vec<Option<Tensor<T>>>,
    pub second: Vec<Option<Tensor<T>>>,
}

impl<T: Float> TrainState<T> {
    pub fn new(num_params: usize) -> Self {
        Self {
            step: 0,
            lr: 0.0,
            first: vec![None; num_params],
            second: vec![None; num_params],
        }
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        let same = |a: &[Option<Tensor<T>>], b: &[Option<Tensor<T>>]| {
            a.len() == b.len()
                && a.iter().zip(b).all(|(x, y)| match (x, y) {
                    (None, None) => true,
                    (Some(x), Some(y)) => x.bit_eq(y),
                    _ => false,
                })
        };
        self.step == other.step
            && self.lr.to_bits() == other.lr.to_bits()
            && same(&self.first, &other.first)
            && same(&self.second, &other.second)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub schedule: Schedule,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, schedule: Schedule) -> Self {
        Self { kind, schedule }
    }

    /// Applies one update with `lr = schedule.lr(state.step)` to every trainable
    /// parameter that has a gradient, then advances the step. Returns the lr used.
    pub fn step<T: Float>(
        &self,
        state: &mut TrainState<T>,
        store: &mut ParamStore<T>,
        grads: &[Option<Tensor<T>>],
    ) -> Result<f64> {
        if grads.len() != store.len() || state.first.len() != store.len() {
            return Err(invalid(format!(
                "optimizer state covers {} params, gradients {}, store {}",
                state.first.len(),
                grads.len(),
                store.len()
            )));
        }
        let lr = self.schedule.lr(state.step);
        let t = state.step + 1;
        for id in store.ids().collect::<Vec<_>>() {
            let Some(grad) = &grads[id.0] else { continue };
            if !store.entry(id).trainable {
                continue;
            }
            let param = store.get(id);
            if grad.shape() != param.shape() {
                return Err(invalid(format!(
                    "gradient shape {:?} for param {:?}",
                    grad.shape(),
                    param.shape()
                )));
            }
            let p: Vec<f64> = param.to_f64_vec();
            let g: Vec<f64> = grad.to_f64_vec();
            let shape = param.shape().to_vec();
            let updated: Vec<f64> = match self.kind {
                OptimizerKind::Sgd { momentum, weight_decay } => {
                    let d: Vec<f64> = g.iter().zip(&p).map(|(g, p)| g + weight_decay * p).collect();
                    let buf: Vec<f64> = match &state.first[id.0] {
                        None => d,
                        Some(b) => b.to_f64_vec().iter().zip(&d).map(|(b, d)| momentum * b + d).collect(),
                    };
                    let out = p.iter().zip(&buf).map(|(p, b)| p - lr * b).collect();
                    state.first[id.0] = Some(to_tensor(&shape, &buf));
                    out
                }
                OptimizerKind::AdamW {
                    beta1,
                    beta2,
                    eps,
                    weight_decay,
                } => {
                    let zeros = || vec![0.0; p.len()];
                    let m0 = state.first[id.0].as_ref().map_or_else(zeros, Tensor::to_f64_vec);
                    let v0 = state.second[id.0].as_ref().map_or_else(zeros, Tensor::to_f64_vec);
                    let c1 = 1.0 - beta1.powi(t as i32);
                    let c2 = 1.0 - beta2.powi(t as i32);
                    let mut m = Vec::with_capacity(p.len());
                    let mut v = Vec::with_capacity(p.len());
                    let mut out = Vec::with_capacity(p.len());
                    for i in 0..p.len() {
                        let mi = beta1 * m0[i] + (1.0 - beta1) * g[i];
                        let vi = beta2 * v0[i] + (1.0 - beta2) * g[i] * g[i];
                        let decayed = p[i] - lr * weight_decay * p[i];
                        out.push(decayed - lr * (mi / c1) / ((vi / c2).sqrt() + eps));
                        m.push(mi);
                        v.push(vi);
                    }
                    state.first[id.0] = Some(to_tensor(&shape, &m));
                    state.second[id.0] = Some(to_tensor(&shape, &v));
                    out
                }
            };
            store.set(id, to_tensor(&shape, &updated))?;
        }
        state.step = t;
        state.lr = lr;
        Ok(lr)
    }
}

fn to_tensor<T: Float>(shape: &[usize], data: &[f64]) -> Tensor<T> {
    Tensor::from_vec(shape, data.iter().map(|&v| T::from_f64(v)).collect()).expect("shape preserved")
}
