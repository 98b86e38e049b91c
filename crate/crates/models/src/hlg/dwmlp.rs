//! Depth-wise MLP: expand, depth-wise 3×3 (optionally strided), squeeze-and-excitation, project.

use lgseg_tensor::{Float, Graph, ParamBuilder, Var};

use crate::error::Result;
use crate::nn::{Conv, LayerNorm, Linear};

#[derive(Debug, Clone)]
pub struct SqueezeExcite {
    pub reduce: Linear,
    pub expand: Linear,
}

impl SqueezeExcite {
    pub fn new<T: Float>(b: &mut ParamBuilder<T>, c: usize, squeeze: usize) -> Self {
        Self {
            reduce: Linear::new(b, "reduce", c, squeeze, true),
            expand: Linear::new(b, "expand", squeeze, c, true),
        }
    }

    /// Per-sample channel gates `[N, C]` in `(0, 1)`.
    pub fn gates<'g, T: Float>(&self, g: &'g Graph<T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let s = self.reduce.forward(g, &x.global_avg_pool()?)?.relu()?;
        Ok(self.expand.forward(g, &s)?.sigmoid()?)
    }

    pub fn forward<'g, T: Float>(&self, g: &'g Graph<T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        Ok(x.channel_scale(&self.gates(g, x)?)?)
    }

    pub fn num_params(&self) -> usize {
        self.reduce.num_params() + self.expand.num_params()
    }
}

#[derive(Debug, Clone)]
pub struct DwMlp {
    pub norm: LayerNorm,
    pub expand: Linear,
    pub dw: Conv,
    pub se: SqueezeExcite,
    pub project: Linear,
    pub stride: usize,
}

impl DwMlp {
    pub fn new<T: Float>(
        b: &mut ParamBuilder<T>,
        cin: usize,
        cout: usize,
        hidden: usize,
        squeeze: usize,
        stride: usize,
    ) -> Self {
        Self {
            norm: LayerNorm::new(b, "norm", cin),
            expand: Linear::new(b, "expand", cin, hidden, true),
            dw: Conv::depthwise(b, "dw", hidden, 3, stride, true),
            se: b.scope("se", |b| SqueezeExcite::new(b, hidden, squeeze)),
            project: Linear::new(b, "project", hidden, cout, true),
            stride,
        }
    }

    pub fn has_residual(&self) -> bool {
        self.stride == 1 && self.expand.cin == self.project.cout
    }

    pub fn forward<'g, T: Float>(&self, g: &'g Graph<T>, x: &Var<'g, T>, drop_path: f64) -> Result<Var<'g, T>> {
        let y = self.expand.forward(g, &self.norm.forward(g, x)?)?.gelu()?;
        let y = self.dw.forward(g, &y)?.gelu()?;
        let y = self.project.forward(g, &self.se.forward(g, &y)?)?;
        if self.has_residual() {
            Ok(x.add(&y.drop_path(drop_path)?)?)
        } else {
            Ok(y)
        }
    }

    pub fn num_params(&self) -> usize {
        2 * self.norm.c
            + self.expand.num_params()
            + self.dw.num_params()
            + self.se.num_params()
            + self.project.num_params()
    }
}
