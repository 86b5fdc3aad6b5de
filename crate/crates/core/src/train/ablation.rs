use std::fmt::Write as _;

use crate::config::RunConfig;
use crate::data::PairedSample;
use crate::error::Result;
use crate::losses::gradient_loss;
use crate::metrics::{mse, psnr_from_mse, ssim};
use crate::model::Generator;
use crate::train::config::Variant;
use crate::train::trainer::{StepRecord, Trainer};

/// Scores of one trained variant on the evaluation pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub psnr_db: f64,
    pub ssim: f64,
    /// Mean Sobel-gradient MSE between prediction and clean image.
    pub grad_residual: f64,
    pub steps: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AblationReport {
    /// The untouched rainy inputs, for reference.
    pub input: Option<AblationRow>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == variant.label())
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>9} {:>8} {:>13} {:>7}",
            "variant", "psnr_db", "ssim", "grad_residual", "steps"
        );
        for r in self.input.iter().chain(&self.rows) {
            let _ = writeln!(
                out,
                "{:<12} {:>9.4} {:>8.5} {:>13.6e} {:>7}",
                r.label, r.psnr_db, r.ssim, r.grad_residual, r.steps
            );
        }
        out
    }
}

/// Mean PSNR, SSIM and gradient residual of `predict` over `data`, with
/// predictions clamped to `[0, 1]`.
pub fn score_predictions<F>(data: &[PairedSample], mut predict: F) -> Result<(f64, f64, f64)>
where
    F: FnMut(&PairedSample) -> Result<crate::tensor::Tensor<f32>>,
{
    let (mut p, mut s, mut g) = (0.0, 0.0, 0.0);
    for sample in data {
        let pred = predict(sample)?.map(|v| v.clamp(0.0, 1.0));
        p += psnr_from_mse(mse(&pred, &sample.clean)?, 1.0);
        s += ssim(&pred, &sample.clean)?;
        g += gradient_loss(&pred, &sample.clean)?;
    }
    let n = data.len().max(1) as f64;
    Ok((p / n, s / n, g / n))
}

fn score_generator(gen: &mut Generator<f32>, data: &[PairedSample]) -> Result<(f64, f64, f64)> {
    score_predictions(data, |s| gen.infer(&s.rainy))
}

/// Trains every variant from the same seed and data, then scores each on
/// `eval`. `on_step` sees every step of every run; `on_trained` sees each
/// finished trainer.
pub fn run_ablation<S, T>(
    run: &RunConfig,
    train: &[PairedSample],
    eval: &[PairedSample],
    mut on_step: S,
    mut on_trained: T,
) -> Result<AblationReport>
where
    S: FnMut(Variant, &StepRecord) -> Result<()>,
    T: FnMut(Variant, &Trainer) -> Result<()>,
{
    let (p, s, g) = score_predictions(eval, |x| Ok(x.rainy.clone()))?;
    let mut report = AblationReport {
        input: Some(AblationRow {
            label: "input".into(),
            psnr_db: p,
            ssim: s,
            grad_residual: g,
            steps: 0,
        }),
        rows: Vec::new(),
    };
    for variant in Variant::ALL {
        let mut cfg = run.clone();
        cfg.train.variant = variant;
        let mut trainer = Trainer::new(&cfg)?;
        trainer.train(train, |r| on_step(variant, r), |_, _| Ok(()))?;
        on_trained(variant, &trainer)?;
        let steps = trainer.state().step;
        let (p, s, g) = score_generator(trainer.generator_mut(), eval)?;
        report.rows.push(AblationRow {
            label: variant.label().into(),
            psnr_db: p,
            ssim: s,
            grad_residual: g,
            steps,
        });
    }
    Ok(report)
}
