use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::train::schedule::PlateauConfig;

/// The three ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Pixel loss only.
    Raspp,
    /// Pixel plus Sobel gradient loss.
    Graspp,
    /// Gradient-guided generator with the adversarial term after warmup.
    GrasppGan,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Raspp, Variant::Graspp, Variant::GrasppGan];

    /// Lower-case name used on the command line and in files.
    pub fn name(self) -> &'static str {
        match self {
            Variant::Raspp => "raspp",
            Variant::Graspp => "graspp",
            Variant::GrasppGan => "graspp-gan",
        }
    }

    /// Upper-case label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Raspp => "RASPP",
            Variant::Graspp => "GRASPP",
            Variant::GrasppGan => "GRASPP-GAN",
        }
    }

    pub fn uses_gradient_loss(self) -> bool {
        self != Variant::Raspp
    }

    pub fn uses_discriminator(self) -> bool {
        self == Variant::GrasppGan
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s || v.label() == s)
            .ok_or_else(|| {
                Error::Config(format!("unknown variant `{s}` (raspp, graspp, graspp-gan)"))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_g: f64,
    pub lr_d: f64,
    pub batch_size: usize,
    pub crop: usize,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub weights: LossWeights,
    pub variant: Variant,
    /// Seeds the shuffle and crop generator.
    pub seed: u64,
    pub plateau: PlateauConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_g: 0.001,
            lr_d: 0.1,
            batch_size: 4,
            crop: 128,
            warmup_epochs: 2,
            epochs: 10,
            weights: LossWeights::default(),
            variant: Variant::GrasppGan,
            seed: 0,
            plateau: PlateauConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [("lr_g", self.lr_g), ("lr_d", self.lr_d)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.crop < crate::model::MIN_SIDE {
            return Err(Error::Config(format!(
                "crop {} is below the minimum network input {}",
                self.crop,
                crate::model::MIN_SIDE
            )));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        let p = &self.plateau;
        if !(p.factor > 0.0 && p.factor <= 1.0)
            || !(p.min_rel_improvement >= 0.0 && p.min_rel_improvement.is_finite())
        {
            return Err(Error::Config(format!(
                "plateau factor must be in (0, 1] and margin non-negative, got {} and {}",
                p.factor, p.min_rel_improvement
            )));
        }
        self.weights.validate()
    }
}
