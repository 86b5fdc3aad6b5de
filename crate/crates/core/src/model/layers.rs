//! Parameterised building blocks shared by the generator and discriminator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::model::params::{he_normal, ParamId, ParamStore, StatsStore};
use crate::ops::{ConvSpec, NormMode, LEAKY_SLOPE};
use crate::tensor::{Float, Shape, Tensor};

/// Allocates parameters in construction order from a seeded stream.
pub(crate) struct Builder<T> {
    pub params: ParamStore<T>,
    pub stats: StatsStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Float> Builder<T> {
    pub fn new(seed: u64) -> Self {
        Builder {
            params: ParamStore::new(),
            stats: StatsStore::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn conv(&mut self, prefix: &str, spec: ConvSpec, bias: bool) -> Result<Conv> {
        let fan_in = spec.in_channels * spec.kernel.0 * spec.kernel.1;
        let weight = self.params.add(
            format!("{prefix}.weight"),
            he_normal(spec.weight_shape(), fan_in, &mut self.rng),
        )?;
        let bias = if bias {
            Some(
                self.params
                    .add(format!("{prefix}.bias"), Tensor::zeros(spec.bias_shape()))?,
            )
        } else {
            None
        };
        Ok(Conv { spec, weight, bias })
    }

    pub fn norm(&mut self, prefix: &str, channels: usize) -> Result<Norm> {
        let s = Shape::new(1, channels, 1, 1);
        let gamma = self
            .params
            .add(format!("{prefix}.gamma"), Tensor::full(s, T::one()))?;
        let beta = self
            .params
            .add(format!("{prefix}.beta"), Tensor::zeros(s))?;
        let stats = self.stats.add(prefix, channels);
        Ok(Norm { gamma, beta, stats })
    }

    pub fn linear(&mut self, prefix: &str, inputs: usize, outputs: usize) -> Result<Dense> {
        let weight = self.params.add(
            format!("{prefix}.weight"),
            he_normal(Shape::new(outputs, inputs, 1, 1), inputs, &mut self.rng),
        )?;
        let bias = self.params.add(
            format!("{prefix}.bias"),
            Tensor::zeros(Shape::new(1, outputs, 1, 1)),
        )?;
        Ok(Dense { weight, bias })
    }
}

/// Per-call forward state: the tape, the bound parameter leaves, running
/// statistics and the normalization mode.
pub struct Ctx<'a, T> {
    pub tape: &'a mut Tape<T>,
    pub vars: &'a [Var],
    pub stats: &'a mut StatsStore<T>,
    pub mode: NormMode,
}

impl<T: Float> Ctx<'_, T> {
    fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv {
    pub fn forward<T: Float>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.var(self.weight);
        let b = self.bias.map(|b| ctx.var(b));
        ctx.tape.conv2d(x, w, b, self.spec)
    }
}

#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: usize,
}

impl Norm {
    pub fn forward<T: Float>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (g, b) = (ctx.var(self.gamma), ctx.var(self.beta));
        let running = ctx.stats.get_mut(self.stats);
        ctx.tape.batchnorm2d(x, g, b, running, ctx.mode)
    }
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn forward<T: Float>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.var(self.weight), ctx.var(self.bias));
        ctx.tape.linear(x, w, b)
    }
}

/// ResNet basic block at stride 1: two 3×3 conv+BN stages, an optional 1×1
/// conv+BN projection on the shortcut, LeakyReLU after each stage and after
/// the sum.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub conv1: Conv,
    pub bn1: Norm,
    pub conv2: Conv,
    pub bn2: Norm,
    pub shortcut: Option<(Conv, Norm)>,
}

impl ResidualBlock {
    pub(crate) fn build<T: Float>(
        b: &mut Builder<T>,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        padding: crate::ops::PaddingMode,
    ) -> Result<Self> {
        let conv1 = b.conv(
            &format!("{prefix}.conv1"),
            ConvSpec::same(in_channels, out_channels, 3, 1, padding),
            false,
        )?;
        let bn1 = b.norm(&format!("{prefix}.bn1"), out_channels)?;
        let conv2 = b.conv(
            &format!("{prefix}.conv2"),
            ConvSpec::same(out_channels, out_channels, 3, 1, padding),
            false,
        )?;
        let bn2 = b.norm(&format!("{prefix}.bn2"), out_channels)?;
        let shortcut = if in_channels != out_channels {
            let conv = b.conv(
                &format!("{prefix}.downsample.conv"),
                ConvSpec::same(in_channels, out_channels, 1, 1, padding),
                false,
            )?;
            let norm = b.norm(&format!("{prefix}.downsample.bn"), out_channels)?;
            Some((conv, norm))
        } else {
            None
        };
        Ok(ResidualBlock {
            conv1,
            bn1,
            conv2,
            bn2,
            shortcut,
        })
    }

    pub fn forward<T: Float>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(ctx, x)?;
        let h = self.bn1.forward(ctx, h)?;
        let h = ctx.tape.leaky_relu(h, LEAKY_SLOPE)?;
        let h = self.conv2.forward(ctx, h)?;
        let h = self.bn2.forward(ctx, h)?;
        let sc = match &self.shortcut {
            Some((conv, norm)) => {
                let s = conv.forward(ctx, x)?;
                norm.forward(ctx, s)?
            }
            None => x,
        };
        let sum = ctx.tape.add(h, sc)?;
        ctx.tape.leaky_relu(sum, LEAKY_SLOPE)
    }
}
