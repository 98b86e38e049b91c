//! Matrix products.

use rayon::prelude::*;

use crate::dtype::Float;
use crate::error::{mismatch, Result};
use crate::graph::{MatmulRecord, Var};
use crate::tensor::Tensor;

/// Row blocks are fixed-size so results do not depend on the thread count.
const ROW_BLOCK: usize = 64;
const PAR_THRESHOLD: usize = 1 << 16;

/// `c (+)= op(a) · op(b)` for one `[m, n]` output.
///
/// `a` is stored `[m, k]`, or `[k, m]` when `ta`; `b` is `[k, n]`, or `[n, k]` when `tb`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Float>(
    a: &[T],
    b: &[T],
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    ta: bool,
    tb: bool,
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(T::zero());
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    let run = |row0: usize, rows: usize, cblock: &mut [T]| {
        let a_off = row0 as isize * rsa;
        // SAFETY: offsets stay inside `a`; `cblock` holds exactly `rows * n` elements.
        unsafe {
            T::gemm_raw(
                rows,
                k,
                n,
                T::one(),
                a.as_ptr().offset(a_off),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                cblock.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    };
    if m * n * k < PAR_THRESHOLD || m <= ROW_BLOCK {
        run(0, m, c);
    } else {
        c.par_chunks_mut(ROW_BLOCK * n)
            .enumerate()
            .for_each(|(i, block)| run(i * ROW_BLOCK, block.len() / n, block));
    }
}

/// Batched form of [`gemm`] over a leading batch axis.
#[allow(clippy::too_many_arguments)]
fn gemm_batched<T: Float>(a: &[T], b: &[T], batch: usize, m: usize, k: usize, n: usize, ta: bool, tb: bool) -> Vec<T> {
    let mut c = vec![T::zero(); batch * m * n];
    if m * n == 0 {
        return c;
    }
    let body = |(i, cb): (usize, &mut [T])| {
        gemm(
            &a[i * m * k..(i + 1) * m * k],
            &b[i * k * n..(i + 1) * k * n],
            cb,
            m,
            k,
            n,
            ta,
            tb,
            false,
        )
    };
    if batch * m * n * k < PAR_THRESHOLD {
        c.chunks_mut(m * n).enumerate().for_each(body);
    } else {
        c.par_chunks_mut(m * n).enumerate().for_each(body);
    }
    c
}

impl<'g, T: Float> Var<'g, T> {
    /// `[m, k] · [k, n] -> [m, n]`.
    pub fn matmul(&self, rhs: &Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), rhs.value());
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(mismatch("matmul", a.shape(), b.shape()));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let g = self.graph();
        g.add_macs((m * k * n) as u64);
        g.log_matmul(|| MatmulRecord {
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
            rhs_param: rhs.param_id(),
        });
        let mut out = vec![T::zero(); m * n];
        gemm(a.data(), b.data(), &mut out, m, k, n, false, false, false);
        let (av, bv) = (a.clone(), b.clone());
        g.record(
            "matmul",
            Tensor::raw(vec![m, n], out),
            &[self, rhs],
            move |dc, needs| {
                let da = needs[0].then(|| {
                    let mut d = vec![T::zero(); m * k];
                    gemm(dc.data(), bv.data(), &mut d, m, n, k, false, true, false);
                    Tensor::raw(vec![m, k], d)
                });
                let db = needs[1].then(|| {
                    let mut d = vec![T::zero(); k * n];
                    gemm(av.data(), dc.data(), &mut d, k, m, n, true, false, false);
                    Tensor::raw(vec![k, n], d)
                });
                vec![da, db]
            },
        )
    }

    /// Batched product `[b, m, k] · [b, k, n]`, or `[b, m, k] · [b, n, k]ᵀ` when `transpose_rhs`.
    pub fn bmm(&self, rhs: &Var<'g, T>, transpose_rhs: bool) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), rhs.value());
        let ok = a.rank() == 3 && b.rank() == 3 && a.shape()[0] == b.shape()[0];
        let (bt, m, k) = if ok {
            (a.shape()[0], a.shape()[1], a.shape()[2])
        } else {
            (0, 0, 0)
        };
        let (kb, n) = if transpose_rhs {
            (b.shape().get(2).copied(), b.shape().get(1).copied().unwrap_or(0))
        } else {
            (b.shape().get(1).copied(), b.shape().get(2).copied().unwrap_or(0))
        };
        if !ok || kb != Some(k) {
            return Err(mismatch("bmm", a.shape(), b.shape()));
        }
        let g = self.graph();
        g.add_macs((bt * m * k * n) as u64);
        let out = gemm_batched(a.data(), b.data(), bt, m, k, n, false, transpose_rhs);
        let (av, bv) = (a.clone(), b.clone());
        g.record(
            "bmm",
            Tensor::raw(vec![bt, m, n], out),
            &[self, rhs],
            move |dc, needs| {
                let da = needs[0].then(|| {
                    // dA = dC · B (rhs stored [n,k]) or dC · Bᵀ (rhs stored [k,n])
                    let d = gemm_batched(dc.data(), bv.data(), bt, m, n, k, false, !transpose_rhs);
                    Tensor::raw(vec![bt, m, k], d)
                });
                let db = needs[1].then(|| {
                    if transpose_rhs {
                        let d = gemm_batched(dc.data(), av.data(), bt, n, m, k, true, false);
                        Tensor::raw(vec![bt, n, k], d)
                    } else {
                        let d = gemm_batched(av.data(), dc.data(), bt, k, m, n, true, false);
                        Tensor::raw(vec![bt, k, n], d)
                    }
                });
                vec![da, db]
            },
        )
    }

    /// `x[..., k] · w[k, n] (+ b[n])`.
    pub fn linear(&self, weight: &Var<'g, T>, bias: Option<&Var<'g, T>>) -> Result<Var<'g, T>> {
        let shape = self.shape().to_vec();
        let k = *shape.last().unwrap_or(&0);
        if weight.value().rank() != 2 || weight.shape()[0] != k {
            return Err(mismatch("linear", &shape, weight.shape()));
        }
        let rows = self.value().numel() / k.max(1);
        let mut y = self.reshape(&[rows, k])?.matmul(weight)?;
        if let Some(b) = bias {
            y = y.add_bias(b)?;
        }
        let mut out_shape = shape;
        *out_shape.last_mut().expect("rank >= 1") = weight.shape()[1];
        y.reshape(&out_shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Graph, GraphOptions};

    #[test]
    fn identity_is_neutral() {
        let g = Graph::<f64>::standalone(GraphOptions::eval());
        let a = g.constant(Tensor::from_f64(&[2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap());
        let i = g.constant(Tensor::eye(3));
        assert!(a.matmul(&i).unwrap().value().bit_eq(a.value()));
    }

    #[test]
    fn one_by_one() {
        let g = Graph::<f32>::standalone(GraphOptions::eval());
        let a = g.constant(Tensor::from_f64(&[1, 1], &[2.]).unwrap());
        let b = g.constant(Tensor::from_f64(&[1, 1], &[3.]).unwrap());
        assert_eq!(a.matmul(&b).unwrap().value().data(), &[6.0]);
        assert_eq!(g.macs(), 1);
    }

    #[test]
    fn inner_extent_mismatch_names_both_shapes() {
        let g = Graph::<f32>::standalone(GraphOptions::eval());
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[4, 2]));
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"));
    }

    #[test]
    fn parallel_blocks_match_serial() {
        let (m, k, n) = (300, 40, 30);
        let a: Vec<f64> = (0..m * k).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| ((i * 104729) % 11) as f64 - 5.0).collect();
        let mut par = vec![0.0; m * n];
        gemm(&a, &b, &mut par, m, k, n, false, false, false);
        for i in 0..m {
            for j in 0..n {
                let s: f64 = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
                assert_eq!(par[i * n + j], s);
            }
        }
    }
}
