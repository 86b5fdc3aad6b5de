//! The finite-difference suite: every differentiable op, the losses, and
//! both networks, checked in 64-bit against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::gradcheck::{gradient_check, GradCheckOptions, GradReport};
use crate::losses::{
    adversarial_g_loss_var, discriminator_loss_var, gradient_loss_var, l2_loss_var,
    sobel_gradients_var, total_loss_var, LossWeights,
};
use crate::model::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::ops::{ConvSpec, NormMode, Pad2d, PaddingMode, RunningStats, LEAKY_SLOPE};
use crate::tensor::{Shape, Tensor};

/// Tolerance for single ops and losses.
pub const OP_TOL: f64 = 1e-6;
/// Tolerance for the full networks.
pub const NETWORK_TOL: f64 = 1e-5;
pub const STEP: f64 = 1e-5;
/// Smaller, so probes rarely straddle an activation kink.
pub const NETWORK_STEP: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub report: GradReport,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }

    pub fn line(&self) -> String {
        let mut s = format!(
            "{} {:<34} max_rel_err={:.3e} tol={:.0e} coords={}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.report.max_rel_err,
            self.report.tol,
            self.report.checked
        );
        if let (false, Some(w)) = (self.passed(), self.report.worst) {
            s.push_str(&format!(
                " worst=input{}[{}] analytic={:.6e} numeric={:.6e}",
                w.input, w.index, w.analytic, w.numeric
            ));
        }
        s
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(lo..hi))
}

/// Values bounded away from zero, for ops with a kink there.
fn off_zero(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Reduces `y` to a scalar with fixed random weights, so every output
/// element carries a distinct upstream gradient.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(y);
    let scale = 1.0 / (shape.numel() as f64).sqrt();
    let w = uniform(&mut rng, shape, -scale, scale);
    tape.weighted_sum(y, w)
}

struct Suite {
    rng: ChaCha8Rng,
    results: Vec<CheckResult>,
}

impl Suite {
    fn run<F>(
        &mut self,
        name: &str,
        inputs: &[Tensor<f64>],
        opts: GradCheckOptions,
        f: F,
    ) -> Result<()>
    where
        F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
    {
        let report = gradient_check(f, inputs, opts)?;
        self.results.push(CheckResult {
            name: name.to_string(),
            report,
        });
        Ok(())
    }

    fn op<F>(&mut self, name: &str, inputs: &[Tensor<f64>], f: F) -> Result<()>
    where
        F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
    {
        self.run(name, inputs, GradCheckOptions::new(STEP, OP_TOL), f)
    }

    fn u(&mut self, shape: Shape) -> Tensor<f64> {
        uniform(&mut self.rng, shape, -1.0, 1.0)
    }
}

fn conv_case(suite: &mut Suite, name: &str, x: Shape, spec: ConvSpec, bias: bool) -> Result<()> {
    let mut inputs = vec![suite.u(x), suite.u(spec.weight_shape())];
    if bias {
        inputs.push(suite.u(spec.bias_shape()));
    }
    suite.op(name, &inputs, |t, v| {
        let y = t.conv2d(v[0], v[1], v.get(2).copied(), spec)?;
        project(t, y, 11)
    })
}

fn ops(suite: &mut Suite) -> Result<()> {
    let s = Shape::new(1, 2, 5, 6);
    for mode in [
        PaddingMode::Zero,
        PaddingMode::Reflect,
        PaddingMode::Symmetric,
    ] {
        let x = suite.u(s);
        let amount = Pad2d {
            top: 2,
            bottom: 1,
            left: 1,
            right: 3,
        };
        suite.op(&format!("pad/{}", mode.name()), &[x], |t, v| {
            let y = t.pad(v[0], mode, amount)?;
            project(t, y, 1)
        })?;
    }

    let x = Shape::new(1, 2, 5, 5);
    conv_case(
        suite,
        "conv2d/zero-3x3",
        x,
        ConvSpec::same(2, 3, 3, 1, PaddingMode::Zero),
        true,
    )?;
    conv_case(
        suite,
        "conv2d/reflect-3x3",
        x,
        ConvSpec::same(2, 3, 3, 1, PaddingMode::Reflect),
        false,
    )?;
    conv_case(
        suite,
        "conv2d/symmetric-dilation2",
        x,
        ConvSpec::same(2, 3, 3, 2, PaddingMode::Symmetric),
        true,
    )?;
    conv_case(
        suite,
        "conv2d/reflect-7x7",
        Shape::new(1, 2, 8, 8),
        ConvSpec::same(2, 2, 7, 1, PaddingMode::Reflect),
        false,
    )?;
    conv_case(
        suite,
        "conv2d/pointwise",
        x,
        ConvSpec::same(2, 3, 1, 1, PaddingMode::Zero),
        true,
    )?;
    let strided = ConvSpec::same(2, 3, 4, 1, PaddingMode::Zero)
        .with_stride(2)
        .with_pad(PaddingMode::Zero, Pad2d::uniform(1));
    conv_case(
        suite,
        "conv2d/4x4-stride2",
        Shape::new(2, 2, 8, 8),
        strided,
        true,
    )?;

    let c = Shape::new(1, 3, 1, 1);
    for (name, mode) in [
        ("batchnorm/train", NormMode::Train),
        ("batchnorm/train-frozen", NormMode::TrainFrozen),
        ("batchnorm/eval", NormMode::Eval),
    ] {
        let inputs = [
            suite.u(Shape::new(2, 3, 4, 4)),
            suite.u(c).map(|v| v + 1.5),
            suite.u(c),
        ];
        let mut running = RunningStats::new(3);
        running.mean = Tensor::from_vec(c, vec![0.1, -0.2, 0.3])?;
        running.var = Tensor::from_vec(c, vec![0.5, 1.5, 2.0])?;
        suite.op(name, &inputs, |t, v| {
            let mut r = running.clone();
            let y = t.batchnorm2d(v[0], v[1], v[2], &mut r, mode)?;
            project(t, y, 2)
        })?;
    }

    let act = Shape::new(2, 3, 4, 4);
    let x = off_zero(&mut suite.rng, act);
    suite.op("leaky_relu", &[x], |t, v| {
        let y = t.leaky_relu(v[0], LEAKY_SLOPE)?;
        project(t, y, 3)
    })?;
    let x = off_zero(&mut suite.rng, act);
    suite.op("relu", &[x], |t, v| {
        let y = t.relu(v[0])?;
        project(t, y, 4)
    })?;
    let x = off_zero(&mut suite.rng, act).map(|v| v * 4.0);
    suite.op("clamp_symmetric", &[x], |t, v| {
        let y = t.clamp_symmetric(v[0], 2.0)?;
        project(t, y, 18)
    })?;
    let x = uniform(&mut suite.rng, act, -4.0, 4.0);
    suite.op("sigmoid", &[x], |t, v| {
        let y = t.sigmoid(v[0])?;
        project(t, y, 5)
    })?;
    let x = suite.u(act);
    suite.op("global_avg_pool", &[x], |t, v| {
        let y = t.global_avg_pool(v[0])?;
        project(t, y, 6)
    })?;
    let x = suite.u(Shape::new(1, 2, 5, 5));
    suite.op("maxpool3x3_s1/symmetric", &[x], |t, v| {
        let y = t.maxpool3x3_s1(v[0], PaddingMode::Symmetric)?;
        project(t, y, 7)
    })?;
    let inputs = [
        suite.u(Shape::new(2, 3, 2, 2)),
        suite.u(Shape::new(5, 12, 1, 1)),
        suite.u(Shape::new(1, 5, 1, 1)),
    ];
    suite.op("linear", &inputs, |t, v| {
        let y = t.linear(v[0], v[1], v[2])?;
        project(t, y, 8)
    })?;
    let inputs = [
        suite.u(Shape::new(2, 3, 3, 3)),
        suite.u(Shape::new(2, 2, 3, 3)),
    ];
    let batches = [
        suite.u(Shape::new(2, 2, 3, 3)),
        suite.u(Shape::new(1, 2, 3, 3)),
    ];
    suite.op("concat_batch+slice_batch", &batches, |t, v| {
        let y = t.concat_batch(&[v[0], v[1]])?;
        let y = t.slice_batch(y, 1, 2)?;
        project(t, y, 17)
    })?;
    suite.op("concat_channels", &inputs, |t, v| {
        let y = t.concat_channels(&[v[0], v[1]])?;
        project(t, y, 9)
    })?;
    let inputs = [suite.u(act), suite.u(act)];
    suite.op("add", &inputs, |t, v| {
        let y = t.add(v[0], v[1])?;
        project(t, y, 10)
    })?;

    let spec = ConvSpec::same(2, 3, 3, 1, PaddingMode::Reflect);
    let inputs = [
        suite.u(Shape::new(2, 2, 5, 5)),
        suite.u(spec.weight_shape()),
        suite.u(c).map(|v| v + 1.5),
        suite.u(c),
    ];
    suite.op("conv>batchnorm>leaky_relu", &inputs, |t, v| {
        let y = t.conv2d(v[0], v[1], None, spec)?;
        let mut r = RunningStats::new(3);
        let y = t.batchnorm2d(y, v[2], v[3], &mut r, NormMode::Train)?;
        let y = t.leaky_relu(y, LEAKY_SLOPE)?;
        project(t, y, 12)
    })
}

fn losses(suite: &mut Suite) -> Result<()> {
    let img = Shape::new(2, 3, 5, 6);
    let x = suite.u(img);
    suite.op("sobel_gradients", &[x], |t, v| {
        let (gx, gy) = sobel_gradients_var(t, v[0])?;
        let a = project(t, gx, 13)?;
        let b = project(t, gy, 14)?;
        t.combine(&[(a, 1.0), (b, 1.0)])
    })?;
    let inputs = [suite.u(img), suite.u(img)];
    suite.op("l2_loss", &inputs, |t, v| l2_loss_var(t, v[0], v[1]))?;
    suite.op("gradient_loss", &inputs, |t, v| {
        gradient_loss_var(t, v[0], v[1])
    })?;

    let logits = Shape::new(4, 1, 1, 1);
    let inputs = [
        uniform(&mut suite.rng, logits, -3.0, 3.0),
        uniform(&mut suite.rng, logits, -3.0, 3.0),
    ];
    suite.op("discriminator_loss(sigmoid)", &inputs, |t, v| {
        let pr = t.sigmoid(v[0])?;
        let pf = t.sigmoid(v[1])?;
        discriminator_loss_var(t, pr, pf)
    })?;
    suite.op("adversarial_g_loss(sigmoid)", &inputs[..1], |t, v| {
        let p = t.sigmoid(v[0])?;
        adversarial_g_loss_var(t, p)
    })?;
    let inputs = [
        suite.u(img),
        suite.u(img),
        uniform(&mut suite.rng, Shape::new(2, 1, 1, 1), -3.0, 3.0),
    ];
    suite.op("total_loss", &inputs, |t, v| {
        let p = t.sigmoid(v[2])?;
        let (l, _) = total_loss_var(
            t,
            v[0],
            v[1],
            Some(p),
            LossWeights {
                alpha: 1.0,
                beta: 0.5,
            },
            true,
        )?;
        Ok(l)
    })
}

/// Sampled check of a width-0.125 generator and discriminator on 16×16
/// inputs; `coords` bounds the probes per tensor.
fn networks(suite: &mut Suite, coords: usize) -> Result<()> {
    let opts = GradCheckOptions::new(NETWORK_STEP, NETWORK_TOL).sampled(coords, 21);

    let mut gen = Generator::<f64>::new(GeneratorConfig {
        seed: 3,
        ..GeneratorConfig::with_width(0.125)
    })?;
    let mut inputs = vec![uniform(&mut suite.rng, Shape::new(1, 3, 16, 16), 0.0, 1.0)];
    inputs.extend(gen.params().iter().map(|p| p.tensor.clone()));
    suite.run("generator(width=0.125,16x16)", &inputs, opts, |t, v| {
        let y = gen.forward(t, &v[1..], v[0], NormMode::TrainFrozen)?;
        project(t, y, 15)
    })?;

    let mut disc = Discriminator::<f64>::new(DiscriminatorConfig {
        width: 0.125,
        seed: 4,
    })?;
    let img = Shape::new(2, 3, 16, 16);
    let mut inputs = vec![
        uniform(&mut suite.rng, img, 0.0, 1.0),
        uniform(&mut suite.rng, img, 0.0, 1.0),
    ];
    inputs.extend(disc.params().iter().map(|p| p.tensor.clone()));
    suite.run("discriminator(width=0.125,16x16)", &inputs, opts, |t, v| {
        let p = disc.forward(t, &v[2..], v[0], v[1], NormMode::TrainFrozen)?;
        project(t, p, 16)
    })
}

/// Runs the whole suite. `network_coords` bounds the probes per parameter
/// tensor of each network.
pub fn run_suite(network_coords: usize) -> Result<Vec<CheckResult>> {
    let mut suite = Suite {
        rng: ChaCha8Rng::seed_from_u64(2024),
        results: Vec::new(),
    };
    ops(&mut suite)?;
    losses(&mut suite)?;
    networks(&mut suite, network_coords)?;
    Ok(suite.results)
}
