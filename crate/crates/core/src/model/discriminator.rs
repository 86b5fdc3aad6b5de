//! Pair discriminator: four stride-2 conv blocks over the channel-wise
//! concatenation of the rainy input and a candidate background, global
//! average pooling, one fully connected unit, a bounded logit and a sigmoid.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::generator::{scaled_channels, MIN_SIDE};
use crate::model::layers::{Builder, Conv, Ctx, Dense, Norm};
use crate::model::params::{ParamStore, StatsStore};
use crate::ops::{ConvSpec, NormMode, Pad2d, PaddingMode, LEAKY_SLOPE};
use crate::tensor::Float;

const BLOCK_CHANNELS: [usize; 4] = [64, 128, 256, 512];
const KERNEL: usize = 4;
const STRIDE: usize = 2;
/// Logits are held to this magnitude before the sigmoid, which keeps the
/// output within about 3e-7 of either end and never at 0 or 1.
pub const LOGIT_BOUND: f64 = 15.0;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    pub width: f64,
    pub seed: u64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            width: 1.0,
            seed: 1,
        }
    }
}

impl DiscriminatorConfig {
    pub fn block_channels(&self) -> Result<[usize; 4]> {
        let mut out = [0; 4];
        for (o, &b) in out.iter_mut().zip(&BLOCK_CHANNELS) {
            *o = scaled_channels(b, self.width)?;
        }
        Ok(out)
    }
}

fn block_spec(cin: usize, cout: usize) -> ConvSpec {
    ConvSpec::same(cin, cout, KERNEL, 1, PaddingMode::Zero)
        .with_stride(STRIDE)
        .with_pad(PaddingMode::Zero, Pad2d::uniform(1))
}

#[derive(Clone, Debug)]
pub struct Discriminator<T> {
    config: DiscriminatorConfig,
    params: ParamStore<T>,
    stats: StatsStore<T>,
    first: Conv,
    blocks: Vec<(Conv, Norm)>,
    head: Dense,
}

impl<T: Float> Discriminator<T> {
    pub fn new(config: DiscriminatorConfig) -> Result<Self> {
        let ch = config.block_channels()?;
        let mut b = Builder::<T>::new(config.seed);
        let first = b.conv("disc.block1.conv", block_spec(6, ch[0]), true)?;
        let mut blocks = Vec::new();
        for i in 1..4 {
            let conv = b.conv(
                &format!("disc.block{}.conv", i + 1),
                block_spec(ch[i - 1], ch[i]),
                false,
            )?;
            let norm = b.norm(&format!("disc.block{}.bn", i + 1), ch[i])?;
            blocks.push((conv, norm));
        }
        let head = b.linear("disc.fc", ch[3], 1)?;
        Ok(Discriminator {
            config,
            params: b.params,
            stats: b.stats,
            first,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn stats(&self) -> &StatsStore<T> {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut StatsStore<T> {
        &mut self.stats
    }

    pub fn cast<U: Float>(&self) -> Discriminator<U> {
        Discriminator {
            config: self.config.clone(),
            params: self.params.cast(),
            stats: self.stats.cast(),
            first: self.first.clone(),
            blocks: self.blocks.clone(),
            head: self.head.clone(),
        }
    }

    /// Spatial size of the map entering global pooling for an `h × w` input.
    pub fn pooled_map_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let mut hw = self.first.spec.output_size(h, w)?;
        for (conv, _) in &self.blocks {
            hw = conv.spec.output_size(hw.0, hw.1)?;
        }
        Ok(hw)
    }

    /// The conv trunk: returns the feature map that enters global pooling.
    pub fn forward_features(
        &mut self,
        tape: &mut Tape<T>,
        vars: &[Var],
        rainy: Var,
        candidate: Var,
        mode: NormMode,
    ) -> Result<Var> {
        let (rs, cs) = (tape.shape(rainy), tape.shape(candidate));
        if rs != cs || rs.c != 3 {
            return Err(Error::shape(
                "discriminator",
                format!("rainy {rs} and candidate {cs} must be equal RGB batches"),
            ));
        }
        if rs.h < MIN_SIDE || rs.w < MIN_SIDE {
            return Err(Error::shape(
                "discriminator",
                format!("input {rs} is smaller than {MIN_SIDE}x{MIN_SIDE}"),
            ));
        }
        if vars.len() != self.params.len() {
            return Err(Error::Invalid(format!(
                "{} parameter vars bound, discriminator has {}",
                vars.len(),
                self.params.len()
            )));
        }
        let mut ctx = Ctx {
            tape,
            vars,
            stats: &mut self.stats,
            mode,
        };
        let x = ctx.tape.concat_channels(&[rainy, candidate])?;
        let h = self.first.forward(&mut ctx, x)?;
        let mut h = ctx.tape.leaky_relu(h, LEAKY_SLOPE)?;
        for (conv, norm) in &self.blocks {
            h = conv.forward(&mut ctx, h)?;
            h = norm.forward(&mut ctx, h)?;
            h = ctx.tape.leaky_relu(h, LEAKY_SLOPE)?;
        }
        Ok(h)
    }

    /// Probability, per sample, that `candidate` is the genuine background
    /// of `rainy`. Output shape `(n, 1, 1, 1)`.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        vars: &[Var],
        rainy: Var,
        candidate: Var,
        mode: NormMode,
    ) -> Result<Var> {
        let h = self.forward_features(tape, vars, rainy, candidate, mode)?;
        let pooled = tape.global_avg_pool(h)?;
        let mut ctx = Ctx {
            tape,
            vars,
            stats: &mut self.stats,
            mode,
        };
        let logit = self.head.forward(&mut ctx, pooled)?;
        let logit = ctx.tape.clamp_symmetric(logit, LOGIT_BOUND)?;
        ctx.tape.sigmoid(logit)
    }
}
