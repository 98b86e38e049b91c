//! Parameterized building blocks. Each block stores only [`ParamId`]s; values
//! are read from the [`Graph`] snapshot at forward time.

use lgseg_tensor::{Conv2dSpec, Float, Graph, Init, ParamBuilder, ParamId, Var};

use crate::error::Result;

pub const LN_EPS: f64 = 1e-5;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// `x[..., cin] · W[cin, cout] + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
}

impl Linear {
    pub fn new<T: Float>(b: &mut ParamBuilder<T>, name: &str, cin: usize, cout: usize, bias: bool) -> Self {
        b.scope(name, |b| Self {
            weight: b.param("weight", &[cin, cout], Init::TruncNormal { std: 0.02 }),
            bias: bias.then(|| b.param("bias", &[cout], Init::Zeros)),
            cin,
            cout,
        })
    }

    pub fn forward<'g, T: Float>(&self, g: &'g Graph<T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let w = g.param(self.weight);
        let b = self.bias.map(|id| g.param(id));
        Ok(x.linear(&w, b.as_ref())?)
    }

    pub fn num_params(&self) -> usize {
        self.cin * self.cout + if self.bias.is_some() { self.cout } else { 0 }
    }
}

/// Square-kernel 2D convolution with optional bias.
#[derive(Debug, Clone)]
pub struct Conv {
    pub kernel: ParamId,
    pub bias: Option<ParamId>,
    pub k: usize,
    pub cin: usize,
    pub cout: usize,
    pub spec: Conv2dSpec,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float>(
        b: &mut ParamBuilder<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        groups: usize,
        bias: bool,
    ) -> Self {
        let cg = cin / groups;
        b.scope(name, |b| Self {
            kernel: b.param("kernel", &[k, k, cg, cout], Init::KaimingNormal { fan_in: k * k * cg }),
            bias: bias.then(|| b.param("bias", &[cout], Init::Zeros)),
            k,
            cin,
            cout,
            spec: Conv2dSpec::new(stride, k / 2, groups),
        })
    }

    /// Depth-wise `k × k` convolution over `c` channels.
    pub fn depthwise<T: Float>(
        b: &mut ParamBuilder<T>,
        name: &str,
        c: usize,
        k: usize,
        stride: usize,
        bias: bool,
    ) -> Self {
        Self::new(b, name, c, c, k, stride, c, bias)
    }

    pub fn forward<'g, T: Float>(&self, g: &'g Graph<T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let y = x.conv2d(&g.param(self.kernel), self.spec)?;
        Ok(match self.bias {
            Some(id) => y.add_bias(&g.param(id))?,
            None => y,
        })
    }

    pub fn num_params(&self) -> usize {
        self.k * self.k * (self.cin / self.spec.groups) * self.cout + if self.bias.is_some() { self.cout } else { 0 }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub c: usize,
}

impl LayerNorm {
    pub fn new<T: Float>(b: &mut ParamBuilder<T>, name: &str, c: usize) -> Self {
        b.scope(name, |b| Self {
            gamma: b.param("gamma", &[c], Init::Ones),
            beta: b.param("beta", &[c], Init::Zeros),
            c,
        })
    }

    pub fn forward<'g, T: Float>(&self, g: &'g Graph<T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        Ok(x.layer_norm(&g.param(self.gamma), &g.param(self.beta), LN_EPS)?)
    }
}

/// Batch norm whose running statistics live in non-trainable buffers.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub c: usize,
}

impl BatchNorm {
    pub fn new<T: Float>(b: &mut ParamBuilder<T>, name: &str, c: usize) -> Self {
        b.scope(name, |b| Self {
            gamma: b.param("gamma", &[c], Init::Ones),
            beta: b.param("beta", &[c], Init::Zeros),
            running_mean: b.buffer("running_mean", &[c], Init::Zeros),
            running_var: b.buffer("running_var", &[c], Init::Ones),
            c,
        })
    }

    /// Training graphs queue the updated running statistics on the graph.
    pub fn forward<'g, T: Float>(&self, g: &'g Graph<T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let rm = g.param(self.running_mean);
        let rv = g.param(self.running_var);
        let (y, stats) = x.batch_norm(
            &g.param(self.gamma),
            &g.param(self.beta),
            rm.value(),
            rv.value(),
            BN_MOMENTUM,
            BN_EPS,
        )?;
        if let Some(s) = stats {
            g.push_buffer_update(self.running_mean, s.mean);
            g.push_buffer_update(self.running_var, s.var);
        }
        Ok(y)
    }
}

/// Convolution followed by batch norm and an optional ReLU. The convolution
/// carries no bias since the norm absorbs it.
#[derive(Debug, Clone)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub relu: bool,
}

impl ConvBn {
    pub fn new<T: Float>(
        b: &mut ParamBuilder<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        relu: bool,
    ) -> Self {
        b.scope(name, |b| Self {
            conv: Conv::new(b, "conv", cin, cout, k, stride, 1, false),
            bn: BatchNorm::new(b, "bn", cout),
            relu,
        })
    }

    pub fn forward<'g, T: Float>(&self, g: &'g Graph<T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let y = self.bn.forward(g, &self.conv.forward(g, x)?)?;
        Ok(if self.relu { y.relu()? } else { y })
    }

    pub fn num_params(&self) -> usize {
        self.conv.num_params() + 2 * self.bn.c
    }
}

/// Bilinear resize of `[N, H, W, C]` by an integer factor.
pub fn upsample<'g, T: Float>(x: &Var<'g, T>, factor: usize) -> Result<Var<'g, T>> {
    let s = x.shape();
    Ok(x.bilinear_resize(s[1] * factor, s[2] * factor)?)
}
