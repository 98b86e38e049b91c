//! Pointwise nonlinearities, softmax and stochastic regularizers.

use rand::Rng;

use crate::dtype::Float;
use crate::error::{invalid, Result};
use crate::graph::Var;
use crate::tensor::Tensor;

// tanh approximation of GELU
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_f64(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad_f64(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Splits a shape around `axis` into (outer, axis extent, inner).
fn around_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_data<T: Float>(x: &[T], outer: usize, n: usize, inner: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * n * inner + j * inner + i;
            let mut max = T::neg_infinity();
            for j in 0..n {
                max = max.max(x[at(j)]);
            }
            let mut total = T::zero();
            for j in 0..n {
                let e = (x[at(j)] - max).exp();
                out[at(j)] = e;
                total += e;
            }
            for j in 0..n {
                out[at(j)] /= total;
            }
        }
    }
    out
}

impl<'g, T: Float> Var<'g, T> {
    pub fn relu(&self) -> Result<Var<'g, T>> {
        let x = self.value().clone();
        let out = x.map(|v| v.max(T::zero()));
        self.graph().record("relu", out, &[self], move |g, _| {
            vec![Some(
                g.zip_map(&x, |g, x| if x > T::zero() { g } else { T::zero() })
                    .expect("shape"),
            )]
        })
    }

    pub fn gelu(&self) -> Result<Var<'g, T>> {
        let x = self.value().clone();
        let out = x.map(|v| T::from_f64(gelu_f64(v.as_f64())));
        self.graph().record("gelu", out, &[self], move |g, _| {
            vec![Some(
                g.zip_map(&x, |g, x| g * T::from_f64(gelu_grad_f64(x.as_f64())))
                    .expect("shape"),
            )]
        })
    }

    pub fn sigmoid(&self) -> Result<Var<'g, T>> {
        let out = self.value().map(|v| T::one() / (T::one() + (-v).exp()));
        let y = out.clone();
        self.graph().record("sigmoid", out, &[self], move |g, _| {
            vec![Some(g.zip_map(&y, |g, y| g * y * (T::one() - y)).expect("shape"))]
        })
    }

    /// Numerically stable softmax along `axis` (per-slice max subtracted).
    pub fn softmax(&self, axis: usize) -> Result<Var<'g, T>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(invalid("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, n, inner) = around_axis(&shape, axis);
        let out = Tensor::raw(shape.clone(), softmax_data(self.value().data(), outer, n, inner));
        let y = out.clone();
        self.graph().record("softmax", out, &[self], move |g, _| {
            let (yd, gd) = (y.data(), g.data());
            let mut d = vec![T::zero(); yd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| o * n * inner + j * inner + i;
                    let mut dot = T::zero();
                    for j in 0..n {
                        dot += gd[at(j)] * yd[at(j)];
                    }
                    for j in 0..n {
                        d[at(j)] = yd[at(j)] * (gd[at(j)] - dot);
                    }
                }
            }
            vec![Some(Tensor::raw(shape.clone(), d))]
        })
    }

    /// Inverted dropout: zeroes with probability `p` and rescales survivors in
    /// training mode, identity otherwise.
    pub fn dropout(&self, p: f64) -> Result<Var<'g, T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(invalid("dropout", format!("rate {p} not in [0, 1)")));
        }
        if !self.graph().is_training() || p == 0.0 {
            return Ok(self.clone());
        }
        let scale = T::from_f64(1.0 / (1.0 - p));
        let mask: Vec<T> = self.graph().with_rng(|rng| {
            (0..self.value().numel())
                .map(|_| if rng.gen::<f64>() < p { T::zero() } else { scale })
                .collect()
        });
        let mask = Tensor::raw(self.shape().to_vec(), mask);
        self.apply_mask("dropout", mask)
    }

    /// Stochastic depth on a residual branch: each sample along axis 0 is
    /// dropped with probability `p` (survivors rescaled) in training mode.
    pub fn drop_path(&self, p: f64) -> Result<Var<'g, T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(invalid("drop_path", format!("rate {p} not in [0, 1)")));
        }
        if !self.graph().is_training() || p == 0.0 || self.value().rank() == 0 {
            return Ok(self.clone());
        }
        let n = self.shape()[0];
        let per = self.value().numel() / n.max(1);
        let scale = T::from_f64(1.0 / (1.0 - p));
        let keep: Vec<T> = self.graph().with_rng(|rng| {
            (0..n)
                .map(|_| if rng.gen::<f64>() < p { T::zero() } else { scale })
                .collect()
        });
        let mask: Vec<T> = keep.iter().flat_map(|&k| std::iter::repeat_n(k, per)).collect();
        self.apply_mask("drop_path", Tensor::raw(self.shape().to_vec(), mask))
    }

    fn apply_mask(&self, op: &'static str, mask: Tensor<T>) -> Result<Var<'g, T>> {
        let out = self.value().zip_map(&mask, |a, m| a * m)?;
        self.graph().record(op, out, &[self], move |g, _| {
            vec![Some(g.zip_map(&mask, |g, m| g * m).expect("shape"))]
        })
    }
}
