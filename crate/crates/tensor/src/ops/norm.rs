//! Layer norm over the channel axis and batch norm over all other positions.

use crate::dtype::Float;
use crate::error::{mismatch, Result};
use crate::graph::Var;
use crate::tensor::Tensor;

/// Running statistics produced by a training-mode batch norm.
pub struct BatchStats<T: Float> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

fn check_affine<T: Float>(op: &'static str, x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<usize> {
    let c = *x.shape().last().unwrap_or(&0);
    if x.rank() == 0 || gamma.shape() != [c] || beta.shape() != [c] {
        return Err(mismatch(op, x.shape(), gamma.shape()));
    }
    Ok(c)
}

impl<'g, T: Float> Var<'g, T> {
    /// Normalizes each position over the last axis, then applies `gamma`, `beta`.
    pub fn layer_norm(&self, gamma: &Var<'g, T>, beta: &Var<'g, T>, eps: f64) -> Result<Var<'g, T>> {
        let c = check_affine("layer_norm", self.value(), gamma.value(), beta.value())?;
        let eps = T::from_f64(eps);
        let cf = T::from_count(c);
        let x = self.value();
        let rows = x.numel() / c.max(1);
        let mut xhat = vec![T::zero(); x.numel()];
        let mut inv_std = vec![T::zero(); rows];
        for (r, (row, out)) in x.data().chunks_exact(c).zip(xhat.chunks_exact_mut(c)).enumerate() {
            let mean = row.iter().copied().sum::<T>() / cf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cf;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
        }
        let (gv, bv) = (gamma.value().clone(), beta.value().clone());
        let mut out = xhat.clone();
        for row in out.chunks_exact_mut(c) {
            for k in 0..c {
                row[k] = row[k] * gv.data()[k] + bv.data()[k];
            }
        }
        let shape = x.shape().to_vec();
        self.graph().record(
            "layer_norm",
            Tensor::raw(shape.clone(), out),
            &[self, gamma, beta],
            move |g, needs| {
                let gd = g.data();
                let dx = needs[0].then(|| {
                    let mut d = vec![T::zero(); gd.len()];
                    for r in 0..rows {
                        let gr = &gd[r * c..(r + 1) * c];
                        let xr = &xhat[r * c..(r + 1) * c];
                        let mut sum_dxhat = T::zero();
                        let mut sum_dxhat_x = T::zero();
                        for k in 0..c {
                            let dxh = gr[k] * gv.data()[k];
                            sum_dxhat += dxh;
                            sum_dxhat_x += dxh * xr[k];
                        }
                        for k in 0..c {
                            let dxh = gr[k] * gv.data()[k];
                            d[r * c + k] = inv_std[r] / cf * (cf * dxh - sum_dxhat - xr[k] * sum_dxhat_x);
                        }
                    }
                    Tensor::raw(shape.clone(), d)
                });
                let dgamma = needs[1].then(|| {
                    let mut d = vec![T::zero(); c];
                    for (gr, xr) in gd.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for k in 0..c {
                            d[k] += gr[k] * xr[k];
                        }
                    }
                    Tensor::raw(vec![c], d)
                });
                let dbeta = needs[2].then(|| {
                    let mut d = vec![T::zero(); c];
                    for gr in gd.chunks_exact(c) {
                        for k in 0..c {
                            d[k] += gr[k];
                        }
                    }
                    Tensor::raw(vec![c], d)
                });
                vec![dx, dgamma, dbeta]
            },
        )
    }

    /// Batch norm over every position except the last (channel) axis.
    ///
    /// Training graphs normalize with batch statistics and return updated running
    /// statistics (`new = (1 - momentum) * old + momentum * batch`, unbiased variance);
    /// eval graphs use the running statistics.
    pub fn batch_norm(
        &self,
        gamma: &Var<'g, T>,
        beta: &Var<'g, T>,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        momentum: f64,
        eps: f64,
    ) -> Result<(Var<'g, T>, Option<BatchStats<T>>)> {
        let c = check_affine("batch_norm", self.value(), gamma.value(), beta.value())?;
        if running_mean.shape() != [c] || running_var.shape() != [c] {
            return Err(mismatch("batch_norm", self.shape(), running_mean.shape()));
        }
        let x = self.value();
        let rows = x.numel() / c.max(1);
        let eps_t = T::from_f64(eps);
        let train = self.graph().is_training();
        let (mean, var) = if train {
            let m = T::from_count(rows);
            let mut mean = vec![T::zero(); c];
            for row in x.data().chunks_exact(c) {
                for k in 0..c {
                    mean[k] += row[k];
                }
            }
            mean.iter_mut().for_each(|v| *v /= m);
            let mut var = vec![T::zero(); c];
            for row in x.data().chunks_exact(c) {
                for k in 0..c {
                    let d = row[k] - mean[k];
                    var[k] += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= m);
            (mean, var)
        } else {
            (running_mean.to_vec(), running_var.to_vec())
        };
        let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
        let mut xhat = x.to_vec();
        for row in xhat.chunks_exact_mut(c) {
            for k in 0..c {
                row[k] = (row[k] - mean[k]) * inv[k];
            }
        }
        let (gv, bv) = (gamma.value().clone(), beta.value().clone());
        let mut out = xhat.clone();
        for row in out.chunks_exact_mut(c) {
            for k in 0..c {
                row[k] = row[k] * gv.data()[k] + bv.data()[k];
            }
        }
        let stats = train.then(|| {
            let mom = T::from_f64(momentum);
            let keep = T::one() - mom;
            let unbias = if rows > 1 {
                T::from_f64(rows as f64 / (rows - 1) as f64)
            } else {
                T::one()
            };
            BatchStats {
                mean: Tensor::raw(
                    vec![c],
                    (0..c).map(|k| keep * running_mean.data()[k] + mom * mean[k]).collect(),
                ),
                var: Tensor::raw(
                    vec![c],
                    (0..c)
                        .map(|k| keep * running_var.data()[k] + mom * var[k] * unbias)
                        .collect(),
                ),
            }
        });
        let shape = x.shape().to_vec();
        let y = self.graph().record(
            "batch_norm",
            Tensor::raw(shape.clone(), out),
            &[self, gamma, beta],
            move |g, needs| {
                let gd = g.data();
                let mut sum_dy = vec![T::zero(); c];
                let mut sum_dy_xhat = vec![T::zero(); c];
                for (gr, xr) in gd.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for k in 0..c {
                        sum_dy[k] += gr[k];
                        sum_dy_xhat[k] += gr[k] * xr[k];
                    }
                }
                let dx = needs[0].then(|| {
                    let m = T::from_count(rows);
                    let mut d = vec![T::zero(); gd.len()];
                    for (r, (gr, xr)) in gd.chunks_exact(c).zip(xhat.chunks_exact(c)).enumerate() {
                        for k in 0..c {
                            let scale = gv.data()[k] * inv[k];
                            d[r * c + k] = if train {
                                scale * (gr[k] - sum_dy[k] / m - xr[k] * sum_dy_xhat[k] / m)
                            } else {
                                scale * gr[k]
                            };
                        }
                    }
                    Tensor::raw(shape.clone(), d)
                });
                vec![
                    dx,
                    needs[1].then(|| Tensor::raw(vec![c], sum_dy_xhat.clone())),
                    needs[2].then(|| Tensor::raw(vec![c], sum_dy.clone())),
                ]
            },
        )?;
        Ok((y, stats))
    }
}
