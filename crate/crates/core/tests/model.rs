use graspp::autograd::Tape;
use graspp::model::{
    Ctx, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, LOGIT_BOUND,
};
use graspp::ops::{conv2d, ConvSpec, NormMode, PaddingMode};
use graspp::{Shape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(0.0..1.0))
}

fn conv(cin: usize, cout: usize, k: usize, bias: bool) -> usize {
    cin * cout * k * k + if bias { cout } else { 0 }
}

fn bn(c: usize) -> usize {
    2 * c
}

/// Independent per-layer enumeration of the generator at a given width.
fn generator_param_oracle(width: f64) -> usize {
    let s = |c: f64| (c * width).round() as usize;
    let stem = s(64.0);
    let mut total = conv(3, stem, 7, false) + bn(stem);
    let mut cin = stem;
    for cout in [s(64.0), s(128.0), s(256.0), s(512.0)] {
        for _ in 0..2 {
            total += conv(cin, cout, 3, false) + bn(cout) + conv(cout, cout, 3, false) + bn(cout);
            if cin != cout {
                total += conv(cin, cout, 1, false) + bn(cout);
            }
            cin = cout;
        }
    }
    let branch = s(256.0);
    total += 3 * (conv(cin, branch, 3, true) + conv(branch, branch, 1, true));
    let hidden = s(64.0);
    total += conv(3 * branch, hidden, 3, true) + bn(hidden);
    total += conv(hidden, hidden, 3, true) + bn(hidden);
    total += conv(hidden, 3, 3, true);
    total
}

#[test]
fn generator_parameter_count_matches_layer_enumeration() {
    for width in [0.25, 0.125, 1.0] {
        let g = Generator::<f32>::new(GeneratorConfig::with_width(width)).unwrap();
        assert_eq!(
            g.params().num_elements(),
            generator_param_oracle(width),
            "width {width}"
        );
    }
}

#[test]
fn default_aspp_has_three_paths_at_rates_one_two_four() {
    let g = Generator::<f32>::new(GeneratorConfig::default()).unwrap();
    let rates: Vec<usize> = g.aspp().iter().map(|b| b.rate).collect();
    assert_eq!(rates, [1, 2, 4]);
    for b in g.aspp() {
        assert_eq!(b.atrous.spec.dilation, b.rate);
        assert_eq!(b.atrous.spec.kernel, (3, 3));
        assert_eq!(b.pointwise.spec.kernel, (1, 1));
    }
}

#[test]
fn seeded_builds_are_bitwise_identical() {
    let cfg = GeneratorConfig {
        seed: 11,
        ..GeneratorConfig::with_width(0.125)
    };
    let a = Generator::<f32>::new(cfg.clone()).unwrap();
    let b = Generator::<f32>::new(cfg.clone()).unwrap();
    let c = Generator::<f32>::new(GeneratorConfig { seed: 12, ..cfg }).unwrap();
    let bits = |g: &Generator<f32>| -> Vec<u32> {
        g.params()
            .iter()
            .flat_map(|p| p.tensor.data().iter().map(|v| v.to_bits()))
            .collect()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn generator_keeps_resolution_for_odd_and_even_sizes() {
    let mut g = Generator::<f32>::new(GeneratorConfig::with_width(0.125)).unwrap();
    for (h, w) in [(17, 23), (64, 64)] {
        let x = Tensor::full(Shape::new(1, 3, h, w), 0.5f32);
        let y = g.infer(&x).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 3, h, w));
        assert!(y.is_finite());
    }
}

#[test]
fn zero_input_gives_reproducible_finite_output() {
    let run = || {
        let mut g = Generator::<f32>::new(GeneratorConfig::with_width(0.125)).unwrap();
        g.infer(&Tensor::zeros(Shape::new(1, 3, 16, 16))).unwrap()
    };
    let (a, b) = (run(), run());
    assert!(a.is_finite());
    assert_eq!(
        a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn generator_rejects_bad_inputs() {
    let mut g = Generator::<f32>::new(GeneratorConfig::with_width(0.125)).unwrap();
    assert!(g.infer(&Tensor::zeros(Shape::new(1, 1, 16, 16))).is_err());
    assert!(g.infer(&Tensor::zeros(Shape::new(1, 3, 8, 16))).is_err());
    assert!(Generator::<f32>::new(GeneratorConfig {
        aspp_rates: vec![],
        ..GeneratorConfig::default()
    })
    .is_err());
}

#[test]
fn aspp_rate_one_branch_is_a_plain_conv() {
    let g = Generator::<f64>::new(GeneratorConfig::with_width(0.125)).unwrap();
    let br = &g.aspp()[0];
    assert_eq!(br.rate, 1);
    let cin = br.atrous.spec.in_channels;
    let plain = ConvSpec::same(
        cin,
        br.atrous.spec.out_channels,
        3,
        1,
        PaddingMode::Symmetric,
    );
    let x = random(Shape::new(1, cin, 9, 9), 5);
    let w = g.params().tensor(br.atrous.weight);
    let b = br.atrous.bias.map(|b| g.params().tensor(b));
    assert_eq!(br.atrous.spec, plain);
    let y = conv2d(&x, w, b, &br.atrous.spec).unwrap();
    let c = cin;
    let want = Tensor::from_fn(y.shape(), |_, o, yy, xx| {
        let mut acc = b.map_or(0.0, |b| b.data()[o]);
        for ci in 0..c {
            for i in 0..3 {
                for j in 0..3 {
                    let sy = (yy + i).checked_sub(1).map_or(0, |v| v.min(8));
                    let sx = (xx + j).checked_sub(1).map_or(0, |v| v.min(8));
                    acc += w.at(o, ci, i, j) * x.at(0, ci, sy, sx);
                }
            }
        }
        acc
    });
    for (a, b) in y.data().iter().zip(want.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn residual_block_is_identity_when_residual_branch_is_silenced() {
    let mut g = Generator::<f64>::new(GeneratorConfig::with_width(0.125)).unwrap();
    let block = g.blocks()[0].clone();
    assert!(block.shortcut.is_none());
    let gamma = block.bn2.gamma;
    let shape = g.params().tensor(gamma).shape();
    *g.params_mut().tensor_mut(gamma) = Tensor::zeros(shape);
    let c = block.conv1.spec.in_channels;
    let x = random(Shape::new(2, c, 6, 6), 9);

    let mut tape = Tape::new();
    let vars = g.params().bind(&mut tape, false).unwrap();
    let xv = tape.constant(x.clone()).unwrap();
    let mut stats = g.stats().clone();
    let mut ctx = Ctx {
        tape: &mut tape,
        vars: &vars,
        stats: &mut stats,
        mode: NormMode::Train,
    };
    let y = block.forward(&mut ctx, xv).unwrap();
    assert_eq!(tape.value(y).data(), x.data());
}

#[test]
fn discriminator_pools_from_an_eight_by_eight_map_at_128() {
    let d = Discriminator::<f32>::new(DiscriminatorConfig::default()).unwrap();
    assert_eq!(d.pooled_map_size(128, 128).unwrap(), (8, 8));
    assert_eq!(d.pooled_map_size(64, 64).unwrap(), (4, 4));
}

fn disc_forward(
    d: &mut Discriminator<f64>,
    rainy: &Tensor<f64>,
    cand: &Tensor<f64>,
    mode: NormMode,
) -> Tensor<f64> {
    let mut tape = Tape::new();
    let vars = d.params().bind(&mut tape, false).unwrap();
    let r = tape.constant(rainy.clone()).unwrap();
    let c = tape.constant(cand.clone()).unwrap();
    let p = d.forward(&mut tape, &vars, r, c, mode).unwrap();
    tape.value(p).clone()
}

#[test]
fn discriminator_output_stays_inside_the_open_unit_interval() {
    let mut d = Discriminator::<f64>::new(DiscriminatorConfig {
        width: 0.125,
        seed: 2,
    })
    .unwrap();
    for p in d
        .params_mut()
        .iter_mut()
        .filter(|p| p.id.starts_with("disc.fc"))
    {
        p.tensor = p.tensor.map(|v| v * 1e6);
    }
    let s = Shape::new(4, 3, 16, 16);
    let p = disc_forward(&mut d, &random(s, 1), &random(s, 2), NormMode::TrainFrozen);
    let edge = 1.0 / (1.0 + LOGIT_BOUND.exp());
    assert!(p
        .data()
        .iter()
        .all(|&v| v >= edge && v <= 1.0 - edge && v > 1e-7 && v < 1.0 - 1e-7));
    assert!(p
        .data()
        .iter()
        .any(|&v| v - edge < 1e-12 || 1.0 - edge - v < 1e-12));
}

fn permute(t: &Tensor<f64>, order: &[usize]) -> Tensor<f64> {
    let items: Vec<Tensor<f64>> = order.iter().map(|&i| t.select(i)).collect();
    Tensor::stack(&items.iter().collect::<Vec<_>>()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn discriminator_commutes_with_batch_permutation(seed in any::<u64>(), train in any::<bool>()) {
        let mut d = Discriminator::<f64>::new(DiscriminatorConfig { width: 0.125, seed: 3 }).unwrap();
        let s = Shape::new(3, 3, 16, 16);
        let (r, c) = (random(s, seed), random(s, seed ^ 1));
        let mode = if train { NormMode::TrainFrozen } else { NormMode::Eval };
        let p = disc_forward(&mut d, &r, &c, mode);
        let order = [2, 0, 1];
        let q = disc_forward(&mut d, &permute(&r, &order), &permute(&c, &order), mode);
        prop_assert_eq!(p.shape(), Shape::new(3, 1, 1, 1));
        for (k, &i) in order.iter().enumerate() {
            let (a, b) = (q.data()[k], p.data()[i]);
            prop_assert!(a > 0.0 && a < 1.0);
            prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
        }
    }
}
