//! Line-oriented `key = value` configuration with `#` comments, and the
//! resolved run configuration it describes.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::data::{RainPreset, RainSynthesisConfig};
use crate::error::{Error, Result};
use crate::model::{DiscriminatorConfig, GeneratorConfig};
use crate::train::{TrainConfig, Variant};

/// One `key = value` entry with its 1-based source line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Splits `text` into entries. Blank lines and everything after `#` are
/// ignored; a repeated key is an error.
pub fn parse_kv(text: &str) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {line}: expected `key = value`, found `{body}`"
            ))
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(Error::Config(format!(
                "line {line}: missing key before `=`"
            )));
        }
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(Error::Config(format!(
                "line {line}: key `{key}` already set on line {}",
                prev.line
            )));
        }
        out.push(Entry {
            line,
            key: key.to_string(),
            value: value.to_string(),
        });
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_pair<T: FromStr>(key: &str, value: &str) -> Result<(T, T)> {
    let (a, b) = value
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("`{key}`: expected `low, high`, found `{value}`")))?;
    Ok((parse(key, a.trim())?, parse(key, b.trim())?))
}

fn parse_auto(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

/// Everything a command needs, resolved from defaults, a file, then flags.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub rain: RainSynthesisConfig,
}

impl RunConfig {
    /// Sets one key. `rain.preset` replaces all rain ranges except the seed.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let g = &mut self.generator;
        let d = &mut self.discriminator;
        let r = &mut self.rain;
        match key {
            "train.variant" => t.variant = value.parse::<Variant>()?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.warmup_epochs" => t.warmup_epochs = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.crop" => t.crop = parse(key, value)?,
            "train.lr_g" => t.lr_g = parse(key, value)?,
            "train.lr_d" => t.lr_d = parse(key, value)?,
            "train.seed" => t.seed = parse(key, value)?,
            "loss.alpha" => t.weights.alpha = parse(key, value)?,
            "loss.beta" => t.weights.beta = parse(key, value)?,
            "plateau.factor" => t.plateau.factor = parse(key, value)?,
            "plateau.min_rel_improvement" => t.plateau.min_rel_improvement = parse(key, value)?,
            "generator.width" => g.width = parse(key, value)?,
            "generator.aspp_rates" => {
                g.aspp_rates = value
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "generator.aspp_branch_channels" => g.aspp_branch_channels = parse_auto(key, value)?,
            "generator.fusion_hidden_channels" => {
                g.fusion_hidden_channels = parse_auto(key, value)?
            }
            "generator.seed" => g.seed = parse(key, value)?,
            "discriminator.width" => d.width = parse(key, value)?,
            "discriminator.seed" => d.seed = parse(key, value)?,
            "rain.preset" => *r = RainSynthesisConfig::preset(value.parse::<RainPreset>()?, r.seed),
            "rain.num_streaks" => r.num_streaks = parse_pair(key, value)?,
            "rain.length_px" => r.length_px = parse_pair(key, value)?,
            "rain.width_px" => r.width_px = parse_pair(key, value)?,
            "rain.angle_deg" => r.angle_deg = parse_pair(key, value)?,
            "rain.intensity" => r.intensity = parse_pair(key, value)?,
            "rain.blur_radius" => r.blur_radius = parse(key, value)?,
            "rain.seed" => r.seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies parsed entries in order, naming the line of any failure.
    pub fn apply(&mut self, entries: &[Entry]) -> Result<()> {
        for e in entries {
            self.set(&e.key, &e.value).map_err(|err| match err {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", e.line)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply(&parse_kv(text)?)?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_text(&text)
    }

    /// One seed for the whole run: shuffling and crops, generator init, and
    /// discriminator init (`seed + 1`).
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.generator.seed = seed;
        self.discriminator.seed = seed.wrapping_add(1);
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.generator.validate()?;
        self.discriminator.block_channels()?;
        self.rain.validate()
    }

    /// Every key, in a form [`RunConfig::from_text`] reads back exactly.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let g = &self.generator;
        let d = &self.discriminator;
        let r = &self.rain;
        let auto = |v: Option<usize>| v.map_or_else(|| "auto".to_string(), |c| c.to_string());
        let rates: Vec<String> = g.aspp_rates.iter().map(|r| r.to_string()).collect();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("train.variant", t.variant.name().to_string());
        kv("train.epochs", t.epochs.to_string());
        kv("train.warmup_epochs", t.warmup_epochs.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.crop", t.crop.to_string());
        kv("train.lr_g", format!("{:?}", t.lr_g));
        kv("train.lr_d", format!("{:?}", t.lr_d));
        kv("train.seed", t.seed.to_string());
        kv("loss.alpha", format!("{:?}", t.weights.alpha));
        kv("loss.beta", format!("{:?}", t.weights.beta));
        kv("plateau.factor", format!("{:?}", t.plateau.factor));
        kv(
            "plateau.min_rel_improvement",
            format!("{:?}", t.plateau.min_rel_improvement),
        );
        kv("generator.width", format!("{:?}", g.width));
        kv("generator.aspp_rates", rates.join(", "));
        kv(
            "generator.aspp_branch_channels",
            auto(g.aspp_branch_channels),
        );
        kv(
            "generator.fusion_hidden_channels",
            auto(g.fusion_hidden_channels),
        );
        kv("generator.seed", g.seed.to_string());
        kv("discriminator.width", format!("{:?}", d.width));
        kv("discriminator.seed", d.seed.to_string());
        kv(
            "rain.num_streaks",
            format!("{}, {}", r.num_streaks.0, r.num_streaks.1),
        );
        kv(
            "rain.length_px",
            format!("{}, {}", r.length_px.0, r.length_px.1),
        );
        kv(
            "rain.width_px",
            format!("{}, {}", r.width_px.0, r.width_px.1),
        );
        kv(
            "rain.angle_deg",
            format!("{:?}, {:?}", r.angle_deg.0, r.angle_deg.1),
        );
        kv(
            "rain.intensity",
            format!("{:?}, {:?}", r.intensity.0, r.intensity.1),
        );
        kv("rain.blur_radius", format!("{:?}", r.blur_radius));
        kv("rain.seed", r.seed.to_string());
        s
    }
}
