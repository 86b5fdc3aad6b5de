//! One PASS/FAIL line per acceptance criterion. Run with `--nocapture` to see
//! the report.

mod common;

use std::time::Instant;

use common::{correlate, ssim_brute_force, synthetic_pairs, tiny_run};
use graspp::autograd::Tape;
use graspp::checks::{run_suite, NETWORK_TOL};
use graspp::config::RunConfig;
use graspp::data::{PairedSample, RainPreset};
use graspp::losses::{
    discriminator_loss, gradient_loss, l2_loss, sobel_gradients, total_loss, LossWeights, PROB_EPS,
    SOBEL_X, SOBEL_Y,
};
use graspp::metrics::{psnr, psnr_from_mse, ssim};
use graspp::model::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use graspp::ops::NormMode;
use graspp::train::{
    discriminator_step, run_ablation, AdamState, Checkpoint, StepRecord, Trainer, Variant,
};
use graspp::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(0.0..1.0))
}

fn stack(items: &[PairedSample]) -> (Tensor<f32>, Tensor<f32>) {
    let r: Vec<&Tensor<f32>> = items.iter().map(|s| &s.rainy).collect();
    let c: Vec<&Tensor<f32>> = items.iter().map(|s| &s.clean).collect();
    (Tensor::stack(&r).unwrap(), Tensor::stack(&c).unwrap())
}

fn mean_psnr<F: FnMut(&PairedSample) -> Tensor<f32>>(data: &[PairedSample], mut f: F) -> f64 {
    let total: f64 = data
        .iter()
        .map(|s| psnr(&f(s).map(|v| v.clamp(0.0, 1.0)), &s.clean, 1.0).unwrap())
        .sum();
    total / data.len() as f64
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let results = run_suite(3).unwrap();
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.line())
        .collect();
    let worst = results
        .iter()
        .map(|r| r.report.max_rel_err)
        .fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let pass = failed.is_empty() && worst <= NETWORK_TOL && secs < 300.0;
    outcome(
        pass,
        format!(
            "{} checks, worst max_rel_err={worst:.2e} (tol 1e-5), {secs:.1}s{}",
            results.len(),
            if failed.is_empty() {
                String::new()
            } else {
                format!("; failed: {}", failed.join(" | "))
            }
        ),
    )
}

fn shape_contract() -> Outcome {
    let mut g = Generator::<f32>::new(GeneratorConfig::with_width(0.125)).unwrap();
    let mut sizes = Vec::new();
    let mut pass = true;
    for (h, w) in [(17, 23), (64, 64), (128, 128)] {
        let y = g.infer(&Tensor::full(Shape::new(1, 3, h, w), 0.5)).unwrap();
        pass &= y.shape() == Shape::new(1, 3, h, w);
        sizes.push(format!("{h}x{w}->{}x{}", y.shape().h, y.shape().w));
    }
    let mut d = Discriminator::<f32>::new(DiscriminatorConfig {
        width: 0.125,
        seed: 1,
    })
    .unwrap();
    let declared = d.pooled_map_size(128, 128).unwrap();
    let mut tape = Tape::new();
    let vars = d.params().bind(&mut tape, false).unwrap();
    let x = tape
        .constant(Tensor::full(Shape::new(2, 3, 128, 128), 0.3))
        .unwrap();
    let c = tape
        .constant(Tensor::full(Shape::new(2, 3, 128, 128), 0.6))
        .unwrap();
    let f = d
        .forward_features(&mut tape, &vars, x, c, NormMode::Eval)
        .unwrap();
    let map = tape.shape(f);
    pass &= declared == (8, 8) && (map.h, map.w) == (8, 8);
    outcome(
        pass,
        format!(
            "generator {}; discriminator pools from {}x{}",
            sizes.join(", "),
            map.h,
            map.w
        ),
    )
}

fn sobel_oracle() -> Outcome {
    let flat = Tensor::full(Shape::new(1, 3, 9, 11), 0.37f64);
    let (fx, fy) = sobel_gradients(&flat).unwrap();
    let zero = fx.data().iter().chain(fy.data()).all(|&v| v == 0.0);

    let ramp = Tensor::from_fn(Shape::new(1, 1, 8, 10), |_, _, _, x| x as f64);
    let (gx, gy) = sobel_gradients(&ramp).unwrap();
    let oracle = gx.data() == correlate(&ramp, &SOBEL_X).data()
        && gy.data() == correlate(&ramp, &SOBEL_Y).data();
    let eight = (1..7).all(|y| (1..9).all(|x| gx.at(0, 0, y, x) == 8.0));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = Shape::new(2, 3, 12, 12);
    let mut dyadic = || Tensor::from_fn(s, |_, _, _, _| rng.random_range(0..256) as f64 / 256.0);
    let (d, g) = (dyadic(), dyadic());
    let base = gradient_loss(&d, &g).unwrap();
    let invariant = [(0.25, -0.5), (1.0, 1.0), (-2.0, 0.75)]
        .iter()
        .all(|&(a, b)| gradient_loss(&d.map(|v| v + a), &g.map(|v| v + b)).unwrap() == base);
    outcome(
        zero && oracle && eight && invariant,
        format!("constant->0 {zero}, ramp interior gx=8 {eight}, matches correlation {oracle}, offset-invariant {invariant}"),
    )
}

fn loss_identities() -> Outcome {
    let w = LossWeights::default();
    let d = random(Shape::new(2, 3, 16, 16), 1);
    let g = random(Shape::new(2, 3, 16, 16), 2);
    let p = Tensor::full(Shape::new(2, 1, 1, 1), 0.3f64);
    let b = total_loss(&d, &g, Some(&p), w, true).unwrap();
    let combined = (b.total - (b.l2 + 1.0 * b.lg + 0.001 * b.lgan)).abs();
    let weights = (w.alpha, w.beta) == (1.0, 0.001);
    let same = total_loss(&g, &g, None, w, false).unwrap();
    let zero =
        same.l2 == 0.0 && same.lg == 0.0 && same.total == 0.0 && l2_loss(&g, &g).unwrap() == 0.0;
    let half = Tensor::full(Shape::new(4, 1, 1, 1), 0.5f64);
    let bce = (discriminator_loss(&half, &half).unwrap() - 2.0 * std::f64::consts::LN_2).abs();
    outcome(
        combined < 1e-12 && weights && zero && bce < 1e-9,
        format!(
            "total-weighted sum err={combined:.1e}, d==g zero {zero}, |BCE(0.5)-2ln2|={bce:.1e}"
        ),
    )
}

fn metric_identities() -> Outcome {
    let s = Shape::new(1, 3, 32, 32);
    let a = random(s, 10);
    let b = a.zip_map(&random(s, 11), |x, y| 0.6 * x + 0.4 * y).unwrap();
    let self_err = (ssim(&a, &a).unwrap() - 1.0).abs();
    let psnr_err = (psnr_from_mse(0.01, 1.0) - 20.0).abs();
    let brute = (ssim(&a, &b).unwrap() - ssim_brute_force(&a, &b)).abs();
    let noise = random(s, 12).map(|v| v - 0.5);
    let levels: Vec<f64> = (1..=15)
        .map(|k| {
            psnr(
                &a.zip_map(&noise, |c, n| c + 0.02 * k as f64 * n).unwrap(),
                &a,
                1.0,
            )
            .unwrap()
        })
        .collect();
    let monotone = levels.windows(2).all(|w| w[1] < w[0]);
    outcome(
        self_err <= 1e-6 && psnr_err <= 1e-6 && brute <= 1e-6 && monotone,
        format!("|SSIM(x,x)-1|={self_err:.1e}, |PSNR(0.01)-20|={psnr_err:.1e}, SSIM vs brute force {brute:.1e}, PSNR monotone {monotone}"),
    )
}

fn overfit_trend() -> Outcome {
    let start = Instant::now();
    let data = synthetic_pairs(4, 64, RainPreset::Heavy, 11);
    let baseline = mean_psnr(&data, |s| s.rainy.clone());
    let mut run = RunConfig::default();
    run.train.variant = Variant::Graspp;
    run.train.warmup_epochs = 0;
    run.train.batch_size = 4;
    run.train.crop = 32;
    run.train.epochs = 500;
    run.train.plateau.factor = 1.0;
    run.generator.width = 0.25;
    run.discriminator.width = 0.25;
    run.set_seed(1);
    let mut t = Trainer::new(&run).unwrap();
    t.train(&data, |_| Ok(()), |_, _| Ok(())).unwrap();
    let steps = t.state().step;
    let g = t.generator_mut();
    let after = mean_psnr(&data, |s| g.infer(&s.rainy).unwrap());
    let secs = start.elapsed().as_secs_f64();
    outcome(
        steps == 500 && after - baseline >= 5.0 && secs < 900.0,
        format!("{steps} steps: rainy {baseline:.2} dB -> derained {after:.2} dB (+{:.2}, need +5), {secs:.0}s", after - baseline),
    )
}

fn ablation_trend() -> Outcome {
    let data = synthetic_pairs(32, 32, RainPreset::Heavy, 31);
    let mut run = tiny_run(Variant::Raspp, 6, 2);
    run.train.batch_size = 4;
    run.train.crop = 32;
    let report = run_ablation(&run, &data, &data, |_, _| Ok(()), |_, _| Ok(())).unwrap();
    let labels: Vec<&str> = report.rows.iter().map(|r| r.label.as_str()).collect();
    let (raspp, graspp) = (
        report.row(Variant::Raspp).unwrap(),
        report.row(Variant::Graspp).unwrap(),
    );
    let equal_steps = report.rows.iter().all(|r| r.steps == raspp.steps);
    outcome(
        labels == ["RASPP", "GRASPP", "GRASPP-GAN"]
            && equal_steps
            && graspp.grad_residual <= raspp.grad_residual,
        format!(
            "rows {labels:?} at {} steps; grad residual GRASPP {:.4e} <= RASPP {:.4e}",
            raspp.steps, graspp.grad_residual, raspp.grad_residual
        ),
    )
}

fn probabilities(d: &mut Discriminator<f32>, rainy: &Tensor<f32>, cand: &Tensor<f32>) -> Vec<f32> {
    let mut tape = Tape::new();
    let vars = d.params().bind(&mut tape, false).unwrap();
    let x = tape.constant(rainy.clone()).unwrap();
    let c = tape.constant(cand.clone()).unwrap();
    let p = d.forward(&mut tape, &vars, x, c, NormMode::Eval).unwrap();
    tape.value(p).data().to_vec()
}

fn gan_mechanics() -> Outcome {
    // Genuine pairs carry the clean scene, generated ones repeat the rainy input.
    let (train_x, train_c) = stack(&synthetic_pairs(8, 32, RainPreset::Heavy, 21));
    let (test_x, test_c) = stack(&synthetic_pairs(8, 32, RainPreset::Heavy, 22));
    let mut d = Discriminator::<f32>::new(DiscriminatorConfig {
        width: 0.25,
        seed: 5,
    })
    .unwrap();
    let mut adam = AdamState::new(d.params());
    let mut reached = None;
    for step in 1..=200 {
        discriminator_step(&mut d, &mut adam, &train_x, &train_c, &train_x, 0.1).unwrap();
        let real = probabilities(&mut d, &test_x, &test_c);
        let fake = probabilities(&mut d, &test_x, &test_x);
        let right =
            real.iter().filter(|&&p| p > 0.5).count() + fake.iter().filter(|&&p| p < 0.5).count();
        if right as f64 / 16.0 >= 0.95 {
            reached = Some(step);
            break;
        }
    }

    let data = synthetic_pairs(8, 24, RainPreset::Heavy, 23);
    let mut t = Trainer::new(&tiny_run(Variant::GrasppGan, 52, 2)).unwrap();
    let initial = t.discriminator().unwrap().clone();
    t.run_epoch(&data, |_| Ok(())).unwrap();
    t.run_epoch(&data, |_| Ok(())).unwrap();
    let after_warmup = t.discriminator().unwrap();
    let untouched = after_warmup.params() == initial.params()
        && after_warmup.stats() == initial.stats()
        && t.discriminator_forwards() == 0;

    let (all_x, all_c) = stack(&data);
    let (mut adversarial_steps, mut finite) = (0, true);
    let (mut lo, mut hi) = (1.0f32, 0.0f32);
    while !t.finished() {
        let mut records: Vec<StepRecord> = Vec::new();
        t.run_epoch(&data, |r| {
            records.push(*r);
            Ok(())
        })
        .unwrap();
        adversarial_steps += records.len();
        finite &= records.iter().all(|r| {
            [r.l2, r.lg, r.lgan, r.total, r.ld.unwrap_or(f64::NAN)]
                .iter()
                .all(|v| v.is_finite())
        });
        let fake = t.generator_mut().infer(&all_x).unwrap();
        let d = &mut t.discriminator().unwrap().clone();
        for p in probabilities(d, &all_x, &all_c)
            .into_iter()
            .chain(probabilities(d, &all_x, &fake))
        {
            lo = lo.min(p);
            hi = hi.max(p);
        }
    }
    let eps = PROB_EPS as f32;
    let bounded = lo > eps && hi < 1.0 - eps;
    outcome(
        reached.is_some() && untouched && adversarial_steps == 200 && finite && bounded,
        format!(
            "held-out accuracy >= 0.95 at step {}; warmup leaves D untouched {untouched}; {adversarial_steps} adversarial steps finite {finite}, D outputs in [{lo:.3e}, 1-{:.3e}]",
            reached.map_or("never".to_string(), |s| s.to_string()),
            1.0 - hi
        ),
    )
}

fn determinism() -> Outcome {
    let data = synthetic_pairs(10, 24, RainPreset::Heavy, 41);
    let run = tiny_run(Variant::GrasppGan, 2, 1);
    let train_full = || {
        let mut t = Trainer::new(&run).unwrap();
        let mut log = Vec::new();
        t.train(
            &data,
            |r| {
                log.push(*r);
                Ok(())
            },
            |_, _| Ok(()),
        )
        .unwrap();
        (t.into_checkpoint().to_bytes(), log)
    };
    let (a, log_a) = train_full();
    let (b, _) = train_full();
    let identical = a == b;

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.ckpt");
    let mut first = Trainer::new(&run).unwrap();
    let mut log = Vec::new();
    first
        .run_epoch(&data, |r| {
            log.push(*r);
            Ok(())
        })
        .unwrap();
    let half = first.checkpoint();
    half.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let round_trip = loaded.to_bytes() == half.to_bytes();
    let mut resumed = Trainer::resume(loaded).unwrap();
    resumed
        .train(
            &data,
            |r| {
                log.push(*r);
                Ok(())
            },
            |_, _| Ok(()),
        )
        .unwrap();
    let resume_matches =
        log.len() == 10 && log == log_a && resumed.into_checkpoint().to_bytes() == a;
    outcome(
        identical && resume_matches && round_trip,
        format!(
            "seeded runs identical {identical}; resume at step {} matches 10-step run {resume_matches}; save/load bitwise {round_trip}",
            half.step
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 9] = [
        ("gradient suite", gradient_suite),
        ("shape and resolution contract", shape_contract),
        ("Sobel oracle", sobel_oracle),
        ("loss identities", loss_identities),
        ("metric identities", metric_identities),
        ("overfit trend", overfit_trend),
        ("ablation trend", ablation_trend),
        ("GAN mechanics", gan_mechanics),
        ("determinism and persistence", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        println!(
            "{} {}. {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
        if !o.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
