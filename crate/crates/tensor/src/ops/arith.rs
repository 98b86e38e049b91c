//! Elementwise arithmetic, trailing-dimension broadcasting and reductions.

use crate::dtype::Float;
use crate::error::{invalid, mismatch, Result};
use crate::graph::Var;
use crate::tensor::Tensor;

fn same_shape(op: &'static str, a: &Tensor<impl Float>, b: &Tensor<impl Float>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(mismatch(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// True when `b`'s shape equals the trailing dims of `a`.
fn is_trailing(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

/// Sums `g` over leading rows so that it matches a trailing shape of `inner` elements.
fn reduce_leading<T: Float>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    let inner: usize = shape.iter().product();
    let mut out = vec![T::zero(); inner];
    for row in g.data().chunks_exact(inner.max(1)) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::raw(shape.to_vec(), out)
}

impl<'g, T: Float> Var<'g, T> {
    pub fn add(&self, other: &Var<'g, T>) -> Result<Var<'g, T>> {
        same_shape("add", self.value(), other.value())?;
        let out = self.value().zip_map(other.value(), |a, b| a + b)?;
        self.graph().record("add", out, &[self, other], |g, _| {
            vec![Some(g.clone()), Some(g.clone())]
        })
    }

    pub fn sub(&self, other: &Var<'g, T>) -> Result<Var<'g, T>> {
        same_shape("sub", self.value(), other.value())?;
        let out = self.value().zip_map(other.value(), |a, b| a - b)?;
        self.graph().record("sub", out, &[self, other], |g, _| {
            vec![Some(g.clone()), Some(g.map(|v| -v))]
        })
    }

    pub fn mul(&self, other: &Var<'g, T>) -> Result<Var<'g, T>> {
        same_shape("mul", self.value(), other.value())?;
        let out = self.value().zip_map(other.value(), |a, b| a * b)?;
        let (a, b) = (self.value().clone(), other.value().clone());
        self.graph().record("mul", out, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| g.zip_map(&b, |g, b| g * b).expect("shape")),
                needs[1].then(|| g.zip_map(&a, |g, a| g * a).expect("shape")),
            ]
        })
    }

    pub fn add_scalar(&self, c: f64) -> Result<Var<'g, T>> {
        let c = T::from_f64(c);
        let out = self.value().map(|v| v + c);
        self.graph()
            .record("add_scalar", out, &[self], |g, _| vec![Some(g.clone())])
    }

    pub fn mul_scalar(&self, c: f64) -> Result<Var<'g, T>> {
        let c = T::from_f64(c);
        let out = self.value().map(|v| v * c);
        self.graph()
            .record("mul_scalar", out, &[self], move |g, _| vec![Some(g.map(|v| v * c))])
    }

    pub fn neg(&self) -> Result<Var<'g, T>> {
        self.mul_scalar(-1.0)
    }

    /// `self + bias` where `bias` has the shape of `self`'s trailing dimensions.
    /// This is the only implicit broadcast the engine performs.
    pub fn add_bias(&self, bias: &Var<'g, T>) -> Result<Var<'g, T>> {
        let (x, b) = (self.value(), bias.value());
        if !is_trailing(x.shape(), b.shape()) {
            return Err(mismatch("add_bias", x.shape(), b.shape()));
        }
        let inner = b.numel().max(1);
        let mut out = x.to_vec();
        for row in out.chunks_exact_mut(inner) {
            for (o, &bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let out = Tensor::raw(x.shape().to_vec(), out);
        let bshape = b.shape().to_vec();
        self.graph().record("add_bias", out, &[self, bias], move |g, needs| {
            vec![
                needs[0].then(|| g.clone()),
                needs[1].then(|| reduce_leading(g, &bshape)),
            ]
        })
    }

    /// Scales `x: [N, ..., C]` by per-sample channel gates `s: [N, C]`.
    pub fn channel_scale(&self, gates: &Var<'g, T>) -> Result<Var<'g, T>> {
        let (x, s) = (self.value(), gates.value());
        let xs = x.shape();
        if xs.len() < 2 || s.rank() != 2 || s.shape()[0] != xs[0] || s.shape()[1] != xs[xs.len() - 1] {
            return Err(mismatch("channel_scale", xs, s.shape()));
        }
        let n = xs[0];
        let c = xs[xs.len() - 1];
        let per_sample = x.numel() / n.max(1);
        let mut out = x.to_vec();
        for (b, chunk) in out.chunks_exact_mut(per_sample.max(1)).enumerate() {
            let gate = &s.data()[b * c..(b + 1) * c];
            for row in chunk.chunks_exact_mut(c) {
                for (o, &gv) in row.iter_mut().zip(gate) {
                    *o *= gv;
                }
            }
        }
        let out = Tensor::raw(xs.to_vec(), out);
        let (xv, sv) = (x.clone(), s.clone());
        self.graph()
            .record("channel_scale", out, &[self, gates], move |g, needs| {
                let gx = needs[0].then(|| {
                    let mut d = g.to_vec();
                    for (b, chunk) in d.chunks_exact_mut(per_sample.max(1)).enumerate() {
                        let gate = &sv.data()[b * c..(b + 1) * c];
                        for row in chunk.chunks_exact_mut(c) {
                            for (o, &gv) in row.iter_mut().zip(gate) {
                                *o *= gv;
                            }
                        }
                    }
                    Tensor::raw(xv.shape().to_vec(), d)
                });
                let gs = needs[1].then(|| {
                    let mut d = vec![T::zero(); n * c];
                    for b in 0..n {
                        let range = b * per_sample..(b + 1) * per_sample;
                        let grow = g.data()[range.clone()].chunks_exact(c);
                        let xrow = xv.data()[range].chunks_exact(c);
                        for (gr, xr) in grow.zip(xrow) {
                            for k in 0..c {
                                d[b * c + k] += gr[k] * xr[k];
                            }
                        }
                    }
                    Tensor::raw(vec![n, c], d)
                });
                vec![gx, gs]
            })
    }

    /// Sum of all elements as a scalar tensor.
    pub fn sum(&self) -> Result<Var<'g, T>> {
        let out = Tensor::scalar(self.value().sum_all());
        let shape = self.shape().to_vec();
        self.graph().record("sum", out, &[self], move |g, _| {
            vec![Some(Tensor::full(&shape, g.item()))]
        })
    }

    pub fn mean(&self) -> Result<Var<'g, T>> {
        let n = self.value().numel();
        if n == 0 {
            return Err(invalid("mean", "empty tensor"));
        }
        self.sum()?.mul_scalar(1.0 / n as f64)
    }
}
