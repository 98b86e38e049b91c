//! Central finite-difference gradient checking in float64.

pub mod suite;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, GraphOptions, Var};
use crate::tensor::Tensor;

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Per input: `||analytic - numeric|| / max(||analytic||, ||numeric||)`.
    pub rel_errors: Vec<f64>,
    /// Largest elementwise absolute disagreement.
    pub max_abs_error: f64,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares backprop gradients of `sum(f(inputs) * w)` for a fixed random `w`
/// against central differences with step `h`.
///
/// `train` selects training-mode numerics (batch statistics, stochastic masks with a
/// fixed seed so every evaluation draws the same mask).
pub fn check<F>(inputs: &[Tensor<f64>], h: f64, train: bool, f: F) -> Result<GradCheck>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    const SEED: u64 = 0x5eed;
    let opts = |record| GraphOptions {
        train,
        record,
        seed: SEED,
    };

    // fixed projection of the output to a scalar
    let probe = {
        let g = Graph::standalone(opts(false));
        let vars: Vec<_> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&g, &vars)?;
        let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 0xabcdef);
        let w: Vec<f64> = (0..out.value().numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(out.shape(), w)?
    };
    let scalar = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::standalone(opts(false));
        let vars: Vec<_> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&g, &vars)?;
        Ok(out.value().data().iter().zip(probe.data()).map(|(a, b)| a * b).sum())
    };

    let g = Graph::standalone(opts(true));
    let vars: Vec<_> = inputs.iter().map(|t| g.input(t.clone(), true)).collect();
    let out = f(&g, &vars)?;
    let loss = out.mul(&g.constant(probe.clone()))?.sum()?;
    g.backward(&loss)?;

    let mut rel_errors = Vec::with_capacity(inputs.len());
    let mut max_abs_error: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = g.grad(&vars[i]).unwrap_or_else(|| Tensor::zeros(input.shape()));
        let mut numeric = vec![0.0; input.numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            let mut p = input.to_vec();
            p[j] += h;
            plus[i] = Tensor::from_vec(input.shape(), p)?;
            let mut m = input.to_vec();
            m[j] -= h;
            minus[i] = Tensor::from_vec(input.shape(), m)?;
            *slot = (scalar(&plus)? - scalar(&minus)?) / (2.0 * h);
        }
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for (a, n) in analytic.data().iter().zip(&numeric) {
            diff2 += (a - n) * (a - n);
            a2 += a * a;
            n2 += n * n;
            max_abs_error = max_abs_error.max((a - n).abs());
        }
        let denom = a2.sqrt().max(n2.sqrt());
        rel_errors.push(if denom == 0.0 { 0.0 } else { diff2.sqrt() / denom });
    }
    Ok(GradCheck {
        rel_errors,
        max_abs_error,
    })
}
