//! Layout ops: reshape, permute, concat, slice and row gathers. All are exact copies.

use std::sync::Arc;

use crate::dtype::Float;
use crate::error::{invalid, mismatch, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{strides_of, Tensor};

fn permute_data<T: Float>(x: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let shape = x.shape();
    let in_strides = strides_of(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let rank = out_shape.len();
    let numel = x.numel();
    let data = x.data();
    let mut out = Vec::with_capacity(numel);
    if rank == 0 || numel == 0 {
        return Tensor::raw(out_shape, data.to_vec());
    }
    // innermost output axis walked as a strided run
    let last = rank - 1;
    let run = out_shape[last];
    let run_stride = src_strides[last];
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    while out.len() < numel {
        if run_stride == 1 {
            out.extend_from_slice(&data[base..base + run]);
        } else {
            out.extend((0..run).map(|i| data[base + i * run_stride]));
        }
        // advance the multi-index over all but the last axis
        let mut ax = last;
        loop {
            if ax == 0 {
                break;
            }
            ax -= 1;
            idx[ax] += 1;
            base += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Tensor::raw(out_shape, out)
}

fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Copies rows of `x` (viewed as `[rows, inner]`) selected by `index`; `None` yields zeros.
pub fn gather_rows_data<T: Float>(x: &[T], inner: usize, index: &[Option<usize>]) -> Vec<T> {
    let mut out = vec![T::zero(); index.len() * inner];
    for (dst, src) in out.chunks_exact_mut(inner.max(1)).zip(index) {
        if let Some(r) = *src {
            dst.copy_from_slice(&x[r * inner..(r + 1) * inner]);
        }
    }
    out
}

impl<'g, T: Float> Var<'g, T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g, T>> {
        let out = self.value().reshape(shape)?;
        let in_shape = self.shape().to_vec();
        let param = self.param_id();
        Ok(self
            .graph()
            .record("reshape", out, &[self], move |g, _| {
                vec![Some(g.reshape(&in_shape).expect("same numel"))]
            })?
            .with_param(param))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Var<'g, T>> {
        let rank = self.value().rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(invalid(
                "permute",
                format!("{axes:?} is not a permutation of rank {rank}"),
            ));
        }
        let out = permute_data(self.value(), axes);
        let inv = inverse_axes(axes);
        self.graph()
            .record("permute", out, &[self], move |g, _| vec![Some(permute_data(g, &inv))])
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Var<'g, T>> {
        let rank = self.value().rank();
        if rank < 2 {
            return Err(invalid("transpose", "rank < 2"));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 1, rank - 2);
        self.permute(&axes)
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var<'g, T>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(invalid(
                "slice",
                format!("[{start}, {}) out of range for axis {axis} of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis] * inner;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full + start * inner;
            out.extend_from_slice(&self.value().data()[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let param = self.param_id();
        Ok(self
            .graph()
            .record("slice", Tensor::raw(out_shape, out), &[self], move |g, _| {
                let mut d = vec![T::zero(); outer * full];
                for o in 0..outer {
                    let base = o * full + start * inner;
                    d[base..base + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(Tensor::raw(shape.clone(), d))]
            })?
            .with_param(param))
    }

    /// Gathers rows along axis 0 by index; `None` rows are zero (padding).
    pub fn gather_rows(&self, index: Arc<[Option<usize>]>) -> Result<Var<'g, T>> {
        let shape = self.shape().to_vec();
        if shape.is_empty() {
            return Err(invalid("gather_rows", "scalar input"));
        }
        let rows = shape[0];
        if let Some(bad) = index.iter().flatten().find(|&&r| r >= rows) {
            return Err(invalid("gather_rows", format!("row {bad} out of range {rows}")));
        }
        let inner: usize = shape[1..].iter().product();
        let out = gather_rows_data(self.value().data(), inner, &index);
        let mut out_shape = shape.clone();
        out_shape[0] = index.len();
        self.graph()
            .record("gather_rows", Tensor::raw(out_shape, out), &[self], move |g, _| {
                let mut d = vec![T::zero(); rows * inner];
                for (src, dst) in g.data().chunks_exact(inner.max(1)).zip(index.iter()) {
                    if let Some(r) = *dst {
                        for (o, &v) in d[r * inner..(r + 1) * inner].iter_mut().zip(src) {
                            *o += v;
                        }
                    }
                }
                vec![Some(Tensor::raw(shape.clone(), d))]
            })
    }
}

impl<T: Float> Graph<T> {
    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat<'g>(&'g self, parts: &[Var<'g, T>], axis: usize) -> Result<Var<'g, T>> {
        let first = parts.first().ok_or_else(|| invalid("concat", "no inputs"))?;
        let shape = first.shape().to_vec();
        if axis >= shape.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for {shape:?}")));
        }
        for p in parts {
            let s = p.shape();
            if s.len() != shape.len() || s.iter().enumerate().any(|(i, &e)| i != axis && e != shape[i]) {
                return Err(mismatch("concat", &shape, s));
            }
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.value().data()[o * w..(o + 1) * w]);
            }
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = total / inner.max(1);
        let part_shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape().to_vec()).collect();
        let refs: Vec<&Var<'g, T>> = parts.iter().collect();
        self.record("concat", Tensor::raw(out_shape, out), &refs, move |g, needs| {
            let mut offset = 0;
            widths
                .iter()
                .zip(&part_shapes)
                .zip(needs)
                .map(|((&w, ps), &need)| {
                    let start = offset;
                    offset += w;
                    need.then(|| {
                        let mut d = Vec::with_capacity(outer * w);
                        for o in 0..outer {
                            let base = o * total + start;
                            d.extend_from_slice(&g.data()[base..base + w]);
                        }
                        Tensor::raw(ps.clone(), d)
                    })
                })
                .collect()
        })
    }
}
