//! Generator and discriminator networks.

pub mod discriminator;
pub mod generator;
pub mod layers;
pub mod params;

pub use discriminator::{Discriminator, DiscriminatorConfig, LOGIT_BOUND};
pub use generator::{scaled_channels, AsppBranch, Generator, GeneratorConfig, MIN_SIDE};
pub use layers::{Conv, Ctx, Dense, Norm, ResidualBlock};
pub use params::{ParamId, ParamStore, Parameter, StatsStore};
