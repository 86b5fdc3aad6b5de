use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameter ranges of the streak renderer. Integer and real ranges are
/// inclusive `(low, high)` pairs; angles are degrees from vertical.
#[derive(Clone, Debug, PartialEq)]
pub struct RainSynthesisConfig {
    pub num_streaks: (u32, u32),
    pub length_px: (u32, u32),
    pub width_px: (u32, u32),
    pub angle_deg: (f64, f64),
    pub intensity: (f64, f64),
    /// Half-length of the box blur applied along each streak.
    pub blur_radius: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RainPreset {
    /// Slim, numerous, faint streaks.
    Light,
    /// Bright, dense streaks.
    Heavy,
    /// Wide streaks with soft ends.
    Wide,
}

impl RainPreset {
    pub const ALL: [RainPreset; 3] = [RainPreset::Light, RainPreset::Heavy, RainPreset::Wide];

    pub fn name(self) -> &'static str {
        match self {
            RainPreset::Light => "light",
            RainPreset::Heavy => "heavy",
            RainPreset::Wide => "wide",
        }
    }
}

impl fmt::Display for RainPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RainPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RainPreset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown rain preset `{s}` (light, heavy, wide)")))
    }
}

impl Default for RainSynthesisConfig {
    fn default() -> Self {
        RainSynthesisConfig::preset(RainPreset::Heavy, 0)
    }
}

impl RainSynthesisConfig {
    pub fn preset(preset: RainPreset, seed: u64) -> Self {
        let (num_streaks, length_px, width_px, angle_deg, intensity, blur_radius) = match preset {
            RainPreset::Light => ((60, 120), (6, 14), (1, 1), (-15.0, 15.0), (0.15, 0.35), 0.0),
            RainPreset::Heavy => ((100, 200), (10, 24), (1, 2), (-20.0, 20.0), (0.3, 0.6), 1.0),
            RainPreset::Wide => ((20, 50), (12, 30), (3, 6), (-25.0, 25.0), (0.2, 0.45), 2.5),
        };
        RainSynthesisConfig {
            num_streaks,
            length_px,
            width_px,
            angle_deg,
            intensity,
            blur_radius,
            seed,
        }
    }

    /// The generator that `seed` denotes.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        let int_ranges = [
            ("num_streaks", self.num_streaks),
            ("length_px", self.length_px),
            ("width_px", self.width_px),
        ];
        for (name, (lo, hi)) in int_ranges {
            if lo > hi {
                return Err(Error::Config(format!(
                    "rain {name} range {lo}..{hi} is empty"
                )));
            }
        }
        if self.length_px.0 == 0 || self.width_px.0 == 0 {
            return Err(Error::Config(
                "rain streak length and width must be at least 1 px".into(),
            ));
        }
        for (name, (lo, hi)) in [("angle_deg", self.angle_deg), ("intensity", self.intensity)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!(
                    "rain {name} range {lo}..{hi} is empty or not finite"
                )));
            }
        }
        if !(self.intensity.0 > 0.0 && self.intensity.1 <= 1.0) {
            return Err(Error::Config(format!(
                "rain intensity range {:?} must lie in (0, 1]",
                self.intensity
            )));
        }
        if !(self.blur_radius >= 0.0 && self.blur_radius.is_finite()) {
            return Err(Error::Config(format!(
                "rain blur_radius must be finite and non-negative, got {}",
                self.blur_radius
            )));
        }
        Ok(())
    }
}

fn draw_real<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Overlap of `[t − r, t + r]` with `[−half, half]`, normalised by `2r`: a
/// segment of half-length `half` box-blurred along its own axis.
fn blurred_extent(t: f64, half: f64, r: f64) -> f64 {
    if r == 0.0 {
        return (half + 0.5 - t.abs()).clamp(0.0, 1.0);
    }
    let lo = (t - r).max(-half);
    let hi = (t + r).min(half);
    ((hi - lo) / (2.0 * r)).clamp(0.0, 1.0)
}

/// Adds a grey streak layer to `clean` and clamps to `[0, 1]`. Per streak
/// the draws are: centre x, centre y, length, width, angle, intensity.
pub fn synthesize_rain<R: Rng + ?Sized>(
    clean: &Tensor<f32>,
    config: &RainSynthesisConfig,
    rng: &mut R,
) -> Result<Tensor<f32>> {
    config.validate()?;
    let s = clean.shape();
    if s.c != 3 {
        return Err(Error::shape(
            "synthesize_rain",
            format!("expected RGB, got {s}"),
        ));
    }
    let (h, w) = (s.h, s.w);
    let mut out = clean.clone();
    for n in 0..s.n {
        let mut layer = vec![0.0f64; h * w];
        let count = rng.random_range(config.num_streaks.0..=config.num_streaks.1);
        for _ in 0..count {
            let cx = rng.random_range(0.0..w as f64);
            let cy = rng.random_range(0.0..h as f64);
            let length = rng.random_range(config.length_px.0..=config.length_px.1) as f64;
            let width = rng.random_range(config.width_px.0..=config.width_px.1) as f64;
            let theta = draw_real(rng, config.angle_deg).to_radians();
            let intensity = draw_real(rng, config.intensity);
            let (ux, uy) = (theta.sin(), theta.cos());
            let half_len = length / 2.0;
            let half_wid = width / 2.0;
            let reach = half_len + config.blur_radius + half_wid + 1.0;
            let x0 = (cx - reach).floor().max(0.0) as usize;
            let x1 = ((cx + reach).ceil() as usize).min(w);
            let y0 = (cy - reach).floor().max(0.0) as usize;
            let y1 = ((cy + reach).ceil() as usize).min(h);
            for y in y0..y1 {
                for x in x0..x1 {
                    let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                    let along = px * ux + py * uy;
                    let across = px * uy - py * ux;
                    let a = (half_wid + 0.5 - across.abs()).clamp(0.0, 1.0)
                        * blurred_extent(along, half_len, config.blur_radius);
                    layer[y * w + x] += intensity * a;
                }
            }
        }
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let add = layer[y * w + x];
                    if add > 0.0 {
                        let v = (out.at(n, c, y, x) as f64 + add).clamp(0.0, 1.0);
                        out.set(n, c, y, x, v as f32);
                    }
                }
            }
        }
    }
    Ok(out)
}
