//! The RASPP generator: a stride-free ResNet-18 encoder, parallel atrous
//! branches, and a three-layer fusion decoder that emits the derained image.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::layers::{Builder, Conv, Ctx, Norm, ResidualBlock};
use crate::model::params::{ParamStore, StatsStore};
use crate::ops::{ConvSpec, NormMode, PaddingMode, LEAKY_SLOPE};
use crate::tensor::{Float, Tensor};

/// Smallest spatial extent accepted by the networks.
pub const MIN_SIDE: usize = 16;

const STEM_CHANNELS: usize = 64;
const STAGE_CHANNELS: [usize; 4] = [64, 128, 256, 512];
const BLOCKS_PER_STAGE: usize = 2;
const ASPP_BRANCH_BASE: usize = 256;
const FUSION_HIDDEN_BASE: usize = 64;

/// `round(base · width)`, rejecting widths that would leave no channels.
pub fn scaled_channels(base: usize, width: f64) -> Result<usize> {
    if !(width.is_finite() && width > 0.0) {
        return Err(Error::Config(format!(
            "width must be a positive number, got {width}"
        )));
    }
    let c = (base as f64 * width).round() as usize;
    if c == 0 {
        return Err(Error::Config(format!(
            "width {width} scales {base} channels down to zero"
        )));
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    /// Multiplier on every channel count.
    pub width: f64,
    pub aspp_rates: Vec<usize>,
    /// Output channels of each atrous branch; `None` means `256 × width`.
    pub aspp_branch_channels: Option<usize>,
    /// Channels of the first two fusion convs; `None` means `64 × width`.
    pub fusion_hidden_channels: Option<usize>,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            width: 1.0,
            aspp_rates: vec![1, 2, 4],
            aspp_branch_channels: None,
            fusion_hidden_channels: None,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn with_width(width: f64) -> Self {
        GeneratorConfig {
            width,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.aspp_rates.is_empty() || self.aspp_rates.contains(&0) {
            return Err(Error::Config(format!(
                "aspp rates must be a non-empty list of positive integers, got {:?}",
                self.aspp_rates
            )));
        }
        if self.aspp_branch_channels == Some(0) || self.fusion_hidden_channels == Some(0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        self.stem_channels()?;
        Ok(())
    }

    pub fn stem_channels(&self) -> Result<usize> {
        scaled_channels(STEM_CHANNELS, self.width)
    }

    pub fn stage_channels(&self) -> Result<[usize; 4]> {
        let mut out = [0; 4];
        for (o, &b) in out.iter_mut().zip(&STAGE_CHANNELS) {
            *o = scaled_channels(b, self.width)?;
        }
        Ok(out)
    }

    pub fn branch_channels(&self) -> Result<usize> {
        self.aspp_branch_channels
            .map_or_else(|| scaled_channels(ASPP_BRANCH_BASE, self.width), Ok)
    }

    pub fn hidden_channels(&self) -> Result<usize> {
        self.fusion_hidden_channels
            .map_or_else(|| scaled_channels(FUSION_HIDDEN_BASE, self.width), Ok)
    }
}

/// One ASPP path: 3×3 atrous conv at `rate` (symmetric border) then a 1×1
/// pointwise conv.
#[derive(Clone, Debug)]
pub struct AsppBranch {
    pub rate: usize,
    pub atrous: Conv,
    pub pointwise: Conv,
}

#[derive(Clone, Debug)]
pub struct Generator<T> {
    config: GeneratorConfig,
    params: ParamStore<T>,
    stats: StatsStore<T>,
    stem: Conv,
    stem_bn: Norm,
    blocks: Vec<ResidualBlock>,
    aspp: Vec<AsppBranch>,
    fusion: [Conv; 3],
    fusion_bn: [Norm; 2],
}

impl<T: Float> Generator<T> {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let mut b = Builder::<T>::new(config.seed);
        let enc = PaddingMode::Reflect;

        let stem_c = config.stem_channels()?;
        let stem = b.conv("enc.stem.conv", ConvSpec::same(3, stem_c, 7, 1, enc), false)?;
        let stem_bn = b.norm("enc.stem.bn", stem_c)?;

        let mut blocks = Vec::new();
        let mut c_in = stem_c;
        for (stage, &c_out) in config.stage_channels()?.iter().enumerate() {
            for i in 0..BLOCKS_PER_STAGE {
                let prefix = format!("enc.layer{}.{}", stage + 1, i);
                blocks.push(ResidualBlock::build(&mut b, &prefix, c_in, c_out, enc)?);
                c_in = c_out;
            }
        }

        let branch_c = config.branch_channels()?;
        let mut aspp = Vec::new();
        for &rate in &config.aspp_rates {
            let atrous = b.conv(
                &format!("aspp.r{rate}.atrous"),
                ConvSpec::same(c_in, branch_c, 3, rate, PaddingMode::Symmetric),
                true,
            )?;
            let pointwise = b.conv(
                &format!("aspp.r{rate}.pointwise"),
                ConvSpec::same(branch_c, branch_c, 1, 1, PaddingMode::Symmetric),
                true,
            )?;
            aspp.push(AsppBranch {
                rate,
                atrous,
                pointwise,
            });
        }

        let hidden = config.hidden_channels()?;
        let f2 = branch_c * aspp.len();
        let sym = PaddingMode::Symmetric;
        let c1 = b.conv("fusion.conv1", ConvSpec::same(f2, hidden, 3, 1, sym), true)?;
        let n1 = b.norm("fusion.bn1", hidden)?;
        let c2 = b.conv(
            "fusion.conv2",
            ConvSpec::same(hidden, hidden, 3, 1, sym),
            true,
        )?;
        let n2 = b.norm("fusion.bn2", hidden)?;
        let c3 = b.conv("fusion.conv3", ConvSpec::same(hidden, 3, 3, 1, sym), true)?;

        Ok(Generator {
            config,
            params: b.params,
            stats: b.stats,
            stem,
            stem_bn,
            blocks,
            aspp,
            fusion: [c1, c2, c3],
            fusion_bn: [n1, n2],
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
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

    pub fn aspp(&self) -> &[AsppBranch] {
        &self.aspp
    }

    pub fn blocks(&self) -> &[ResidualBlock] {
        &self.blocks
    }

    /// The same network with parameters and statistics converted to `U`.
    pub fn cast<U: Float>(&self) -> Generator<U> {
        Generator {
            config: self.config.clone(),
            params: self.params.cast(),
            stats: self.stats.cast(),
            stem: self.stem.clone(),
            stem_bn: self.stem_bn.clone(),
            blocks: self.blocks.clone(),
            aspp: self.aspp.clone(),
            fusion: self.fusion.clone(),
            fusion_bn: self.fusion_bn.clone(),
        }
    }

    /// Maps a rainy batch `(n, 3, h, w)` to the background estimate of the
    /// same shape. `vars` are this generator's parameters bound on `tape`.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        vars: &[Var],
        image: Var,
        mode: NormMode,
    ) -> Result<Var> {
        let s = tape.shape(image);
        if s.c != 3 {
            return Err(Error::shape(
                "generator",
                format!("expected 3 channels, got {s}"),
            ));
        }
        if s.h < MIN_SIDE || s.w < MIN_SIDE {
            return Err(Error::shape(
                "generator",
                format!("input {s} is smaller than {MIN_SIDE}x{MIN_SIDE}"),
            ));
        }
        if vars.len() != self.params.len() {
            return Err(Error::Invalid(format!(
                "{} parameter vars bound, generator has {}",
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

        // encoder -> f1
        let h = self.stem.forward(&mut ctx, image)?;
        let h = self.stem_bn.forward(&mut ctx, h)?;
        let h = ctx.tape.leaky_relu(h, LEAKY_SLOPE)?;
        let mut h = ctx.tape.maxpool3x3_s1(h, PaddingMode::Symmetric)?;
        for block in &self.blocks {
            h = block.forward(&mut ctx, h)?;
        }

        // ASPP -> f2
        let mut branches = Vec::with_capacity(self.aspp.len());
        for br in &self.aspp {
            let a = br.atrous.forward(&mut ctx, h)?;
            branches.push(br.pointwise.forward(&mut ctx, a)?);
        }
        let f2 = ctx.tape.concat_channels(&branches)?;

        // fusion -> d
        let mut y = f2;
        for (conv, norm) in self.fusion.iter().zip(&self.fusion_bn) {
            y = conv.forward(&mut ctx, y)?;
            y = norm.forward(&mut ctx, y)?;
            y = ctx.tape.relu(y)?;
        }
        self.fusion[2].forward(&mut ctx, y)
    }

    /// Eval-mode inference without gradient bookkeeping.
    pub fn infer(&mut self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false)?;
        let x = tape.constant(image.clone())?;
        let y = self.forward(&mut tape, &vars, x, NormMode::Eval)?;
        Ok(tape.value(y).clone())
    }
}
