#![allow(dead_code)]

use graspp::config::RunConfig;
use graspp::data::{
    procedural_scene, synthesize_rain, PairedSample, RainPreset, RainSynthesisConfig,
};
use graspp::train::{Checkpoint, Variant};
use graspp::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `count` synthetic `size × size` pairs, fully determined by `seed`. The
/// preset's streak count (tuned for 128 × 128) is scaled to the image area.
pub fn synthetic_pairs(
    count: usize,
    size: usize,
    preset: RainPreset,
    seed: u64,
) -> Vec<PairedSample> {
    let mut rain = RainSynthesisConfig::preset(preset, seed);
    let area = (size * size) as f64 / (128.0 * 128.0);
    let scale = |n: u32| ((n as f64 * area).round() as u32).max(1);
    rain.num_streaks = (scale(rain.num_streaks.0), scale(rain.num_streaks.1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let clean = procedural_scene(size, size, &mut rng);
            let rainy = synthesize_rain(&clean, &rain, &mut rng).unwrap();
            PairedSample::new(format!("{i:04}.png"), rainy, clean).unwrap()
        })
        .collect()
}

/// A small, fast run configuration.
pub fn tiny_run(variant: Variant, epochs: usize, warmup: usize) -> RunConfig {
    let mut run = RunConfig::default();
    run.train.variant = variant;
    run.train.epochs = epochs;
    run.train.warmup_epochs = warmup;
    run.train.batch_size = 2;
    run.train.crop = 16;
    run.generator.width = 0.125;
    run.discriminator.width = 0.125;
    run.set_seed(7);
    run
}

pub fn bits(ck: &Checkpoint) -> Vec<u8> {
    ck.to_bytes()
}

pub fn param_bits<'a>(tensors: impl Iterator<Item = &'a graspp::Tensor<f32>>) -> Vec<u32> {
    tensors
        .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
        .collect()
}

/// Direct 3×3 correlation with a symmetric (edge-repeating) border.
pub fn correlate(img: &Tensor<f64>, k: &[[f64; 3]; 3]) -> Tensor<f64> {
    let s = img.shape();
    let clamp = |v: isize, len: usize| -> usize {
        if v < 0 {
            (-v - 1) as usize
        } else if v as usize >= len {
            2 * len - 1 - v as usize
        } else {
            v as usize
        }
    };
    Tensor::from_fn(s, |n, c, y, x| {
        let mut acc = 0.0;
        for (i, row) in k.iter().enumerate() {
            for (j, w) in row.iter().enumerate() {
                let sy = clamp(y as isize + i as isize - 1, s.h);
                let sx = clamp(x as isize + j as isize - 1, s.w);
                acc += w * img.at(n, c, sy, sx);
            }
        }
        acc
    })
}

/// SSIM recomputed window by window with explicit weighted moments.
pub fn ssim_brute_force(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let taps: Vec<f64> = (0..11)
        .map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp())
        .collect();
    let norm: f64 = taps.iter().sum();
    let (c1, c2) = (0.0001, 0.0009);
    let s = a.shape();
    let mut total = 0.0;
    let mut count = 0usize;
    for n in 0..s.n {
        for c in 0..s.c {
            for y0 in 0..=s.h - 11 {
                for x0 in 0..=s.w - 11 {
                    let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let w = taps[i] * taps[j] / (norm * norm);
                            let (p, q) = (a.at(n, c, y0 + i, x0 + j), b.at(n, c, y0 + i, x0 + j));
                            ma += w * p;
                            mb += w * q;
                            saa += w * p * p;
                            sbb += w * q * q;
                            sab += w * p * q;
                        }
                    }
                    let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                    total += (2.0 * ma * mb + c1) * (2.0 * cov + c2)
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
        }
    }
    total / count as f64
}
