//! Full-reference image quality: PSNR, single-scale SSIM, and dataset-level
//! aggregation for a derainer.

use std::fmt::Write as _;

use crate::data::PairedSample;
use crate::error::{Error, Result};
use crate::model::Generator;
use crate::tensor::{Float, Tensor};

/// Value reported when two images are identical.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Dynamic range of the images SSIM is applied to.
pub const SSIM_RANGE: f64 = 1.0;

fn check_pair<T: Float>(a: &Tensor<T>, b: &Tensor<T>, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{} vs {}", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Err(Error::shape(op, "empty image"));
    }
    Ok(())
}

pub fn mse<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    check_pair(a, b, "mse")?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.to_f64_lossy() - y.to_f64_lossy();
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// `10·log10(peak² / MSE)` in dB, or [`PSNR_CAP_DB`] when the MSE is zero.
pub fn psnr<T: Float>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Invalid(format!("peak must be positive, got {peak}")));
    }
    let m = mse(a, b)?;
    Ok(psnr_from_mse(m, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - mid;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable valid-region filtering of one `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean SSIM of one plane pair.
fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, taps: &[f64]) -> f64 {
    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(a, h, w, taps);
    let mu_b = filter_valid(b, h, w, taps);
    let e_aa = filter_valid(&aa, h, w, taps);
    let e_bb = filter_valid(&bb, h, w, taps);
    let e_ab = filter_valid(&ab, h, w, taps);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total +=
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / mu_a.len() as f64
}

/// Single-scale SSIM with an 11×11 Gaussian window (σ = 1.5) over the valid
/// region, computed per channel and averaged over channels and samples.
pub fn ssim<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    check_pair(a, b, "ssim")?;
    let s = a.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::shape(
            "ssim",
            format!("image {s} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let mut total = 0.0;
    for n in 0..s.n {
        for c in 0..s.c {
            let pa: Vec<f64> = a.plane(n, c).iter().map(|v| v.to_f64_lossy()).collect();
            let pb: Vec<f64> = b.plane(n, c).iter().map(|v| v.to_f64_lossy()).collect();
            total += ssim_plane(&pa, &pb, s.h, s.w, &taps);
        }
    }
    Ok(total / (s.n * s.c) as f64)
}

/// Anything that maps a rainy image `(1, 3, h, w)` to a background estimate.
pub trait Derainer {
    fn derain(&mut self, rainy: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl Derainer for Generator<f32> {
    fn derain(&mut self, rainy: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.infer(rainy)
    }
}

/// Returns the rainy input unchanged; scores the "do nothing" baseline.
#[derive(Clone, Copy, Debug, Default)]
pub struct Passthrough;

impl Derainer for Passthrough {
    fn derain(&mut self, rainy: &Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(rainy.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub id: String,
    pub psnr_db: f64,
    pub ssim: f64,
    /// The PSNR is the zero-error cap rather than a measured value.
    pub capped: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub per_image: Vec<ImageScore>,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    pub count: usize,
    /// Items that could not be scored, with the reason.
    pub skipped: Vec<(String, String)>,
}

impl MetricReport {
    pub fn from_scores(mut per_image: Vec<ImageScore>, mut skipped: Vec<(String, String)>) -> Self {
        per_image.sort_by(|a, b| a.id.cmp(&b.id));
        skipped.sort();
        let count = per_image.len();
        let (mut p, mut s) = (0.0, 0.0);
        for r in &per_image {
            p += r.psnr_db;
            s += r.ssim;
        }
        let (mean_psnr_db, mean_ssim) = if count == 0 {
            (0.0, 0.0)
        } else {
            (p / count as f64, s / count as f64)
        };
        MetricReport {
            per_image,
            mean_psnr_db,
            mean_ssim,
            count,
            skipped,
        }
    }

    /// Aligned human-readable table with a trailing mean row.
    pub fn to_table(&self) -> String {
        let width = self
            .per_image
            .iter()
            .map(|r| r.id.len())
            .chain(std::iter::once(4))
            .max()
            .unwrap_or(4);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>7}", "id", "psnr_db", "ssim");
        for r in &self.per_image {
            let mark = if r.capped { " (cap)" } else { "" };
            let _ = writeln!(
                out,
                "{:<width$}  {:>9.4}  {:>7.5}{mark}",
                r.id, r.psnr_db, r.ssim
            );
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>9.4}  {:>7.5}",
            "mean", self.mean_psnr_db, self.mean_ssim
        );
        let _ = writeln!(out, "count {}  skipped {}", self.count, self.skipped.len());
        for (id, why) in &self.skipped {
            let _ = writeln!(out, "skipped {id}: {why}");
        }
        out
    }

    /// One `key=value` record per line.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for r in &self.per_image {
            let _ = writeln!(
                out,
                "id={} psnr={:?} ssim={:?} capped={}",
                r.id, r.psnr_db, r.ssim, r.capped
            );
        }
        out
    }
}

/// Scores one pair after clamping the prediction to `[0, 1]`.
pub fn score_pair(id: &str, prediction: &Tensor<f32>, clean: &Tensor<f32>) -> Result<ImageScore> {
    let pred = prediction.map(|v| v.clamp(0.0, 1.0));
    let m = mse(&pred, clean)?;
    Ok(ImageScore {
        id: id.to_string(),
        psnr_db: psnr_from_mse(m, 1.0),
        ssim: ssim(&pred, clean)?,
        capped: m == 0.0,
    })
}

/// Runs `model` over full-size pairs in eval mode. Items that fail to load
/// or score are recorded in `skipped`; the rest are reported sorted by id.
pub fn evaluate_dataset<M, I>(model: &mut M, items: I) -> Result<MetricReport>
where
    M: Derainer + ?Sized,
    I: IntoIterator<Item = (String, Result<PairedSample>)>,
{
    let mut scores = Vec::new();
    let mut skipped = Vec::new();
    let mut seen = 0usize;
    for (id, item) in items {
        seen += 1;
        let scored = item.and_then(|s| {
            let pred = model.derain(&s.rainy)?;
            pred.ensure_finite("derain")?;
            score_pair(&id, &pred, &s.clean)
        });
        match scored {
            Ok(s) => scores.push(s),
            Err(e @ Error::NonFinite { .. }) => return Err(e),
            Err(e) => skipped.push((id, e.to_string())),
        }
    }
    if seen == 0 {
        return Err(Error::Data("no pairs found".into()));
    }
    Ok(MetricReport::from_scores(scores, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn psnr_reference_points() {
        let a = Tensor::<f64>::zeros(Shape::new(1, 1, 4, 4));
        let b = Tensor::<f64>::full(Shape::new(1, 1, 4, 4), 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        let c = Tensor::<f64>::full(Shape::new(1, 1, 4, 4), 1.0);
        assert!(psnr(&a, &c, 1.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn taps_are_normalized_and_symmetric() {
        let t = gaussian_taps(11, 1.5);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..11 {
            assert_eq!(t[i], t[10 - i]);
        }
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let (m1, m2) = (0.3, 0.7);
        let a = Tensor::<f64>::full(Shape::new(1, 3, 12, 13), m1);
        let b = Tensor::<f64>::full(Shape::new(1, 3, 12, 13), m2);
        let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
        let want = (2.0 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1);
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Tensor::<f64>::zeros(Shape::new(1, 3, 10, 20));
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn report_means_and_order() {
        let scores = vec![
            ImageScore {
                id: "b".into(),
                psnr_db: 30.0,
                ssim: 0.8,
                capped: false,
            },
            ImageScore {
                id: "a".into(),
                psnr_db: 20.0,
                ssim: 0.6,
                capped: false,
            },
        ];
        let r = MetricReport::from_scores(scores, vec![]);
        assert_eq!(r.per_image[0].id, "a");
        assert_eq!(r.mean_psnr_db, 25.0);
        assert!((r.mean_ssim - 0.7).abs() < 1e-15);
        assert_eq!(r.to_records().lines().count(), 2);
        assert!(r.to_table().contains("mean"));
    }
}
