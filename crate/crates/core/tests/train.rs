mod common;

use common::{param_bits, synthetic_pairs, tiny_run};
use graspp::autograd::Tape;
use graspp::data::RainPreset;
use graspp::error::CheckpointError;
use graspp::model::ParamStore;
use graspp::ops::NormMode;
use graspp::train::{
    discriminator_step, plateau_update, AdamState, Checkpoint, PlateauConfig, Trainer, Variant,
    FORMAT_VERSION, LR_FLOOR,
};
use graspp::{Error, Shape, Tensor};
use proptest::prelude::*;

fn scalar_store(v: f64) -> ParamStore<f64> {
    let mut p = ParamStore::new();
    p.add("x", Tensor::scalar(v)).unwrap();
    p
}

#[test]
fn adam_zero_gradient_leaves_parameters_unchanged() {
    let mut p = scalar_store(0.75);
    let mut adam = AdamState::new(&p);
    for _ in 0..5 {
        adam.step(&mut p, &[Tensor::scalar(0.0)], 0.01).unwrap();
    }
    assert_eq!(p.iter().next().unwrap().tensor.data()[0], 0.75);
}

#[test]
fn adam_matches_two_hand_computed_steps() {
    let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.001f64);
    let mut p = scalar_store(0.5);
    let mut adam = AdamState::new(&p);

    adam.step(&mut p, &[Tensor::scalar(1.0)], lr).unwrap();
    let x1 = p.iter().next().unwrap().tensor.data()[0];
    let first = lr * 1.0 / (1.0 + eps);
    assert!((0.5 - x1 - first).abs() < 1e-12);

    adam.step(&mut p, &[Tensor::scalar(-2.0)], lr).unwrap();
    let x2 = p.iter().next().unwrap().tensor.data()[0];
    let m = b1 * ((1.0 - b1) * 1.0) + (1.0 - b1) * -2.0;
    let v = b2 * ((1.0 - b2) * 1.0) + (1.0 - b2) * 4.0;
    let m_hat = m / (1.0 - b1 * b1);
    let v_hat = v / (1.0 - b2 * b2);
    let want = 0.5 - first - lr * m_hat / (v_hat.sqrt() + eps);
    assert!((x2 - want).abs() < 1e-12, "{x2} vs {want}");
    assert_eq!(adam.t, 2);
}

#[test]
fn adam_rejects_non_finite_gradients_before_touching_anything() {
    let mut p = scalar_store(1.0);
    let mut adam = AdamState::new(&p);
    let err = adam
        .step(&mut p, &[Tensor::scalar(f64::NAN)], 0.1)
        .unwrap_err();
    assert!(matches!(err, Error::NonFinite { .. }));
    assert_eq!(p.iter().next().unwrap().tensor.data()[0], 1.0);
    assert_eq!(adam.t, 0);
    assert!(adam.step(&mut p, &[], 0.1).is_err());
}

proptest! {
    #[test]
    fn plateau_rule_never_goes_below_the_floor(n in 1usize..40, lr_g in 1e-9f64..1.0, lr_d in 1e-9f64..1.0) {
        let cfg = PlateauConfig::default();
        let mut history = vec![1.0];
        let mut lr = (lr_g, lr_d);
        for _ in 0..n {
            history.push(1.0);
            let next = plateau_update(&history, lr, &cfg);
            prop_assert!(next.0 >= LR_FLOOR.min(lr.0) && next.1 >= LR_FLOOR.min(lr.1));
            prop_assert!(next.0 <= lr.0 && next.1 <= lr.1);
            lr = next;
        }
    }
}

#[test]
fn plateau_reference_histories() {
    let cfg = PlateauConfig::default();
    assert_eq!(plateau_update(&[1.0, 0.5], (1e-3, 0.1), &cfg), (1e-3, 0.1));
    let (g, d) = plateau_update(&[1.0, 0.9999], (1e-3, 0.1), &cfg);
    assert!((g - 1e-4).abs() < 1e-18 && (d - 1e-2).abs() < 1e-15);
}

#[test]
fn variant_loss_terms_in_the_step_log() {
    let data = synthetic_pairs(4, 24, RainPreset::Heavy, 1);
    for variant in Variant::ALL {
        let mut t = Trainer::new(&tiny_run(variant, 2, 1)).unwrap();
        let mut records = Vec::new();
        t.train(
            &data,
            |r| {
                records.push(*r);
                Ok(())
            },
            |_, _| Ok(()),
        )
        .unwrap();
        assert_eq!(records.len(), 4);
        for r in &records {
            match variant {
                Variant::Raspp => assert!(r.lg == 0.0 && r.lgan == 0.0 && r.ld.is_none()),
                Variant::Graspp => assert!(r.lg > 0.0 && r.lgan == 0.0 && r.ld.is_none()),
                Variant::GrasppGan => assert_eq!(r.ld.is_some(), r.epoch >= 1),
            }
            assert!(r
                .to_string()
                .starts_with(&format!("epoch={} step={}", r.epoch, r.step)));
        }
    }
}

#[test]
fn warmup_leaves_the_discriminator_untouched() {
    let data = synthetic_pairs(4, 24, RainPreset::Heavy, 2);
    let mut t = Trainer::new(&tiny_run(Variant::GrasppGan, 3, 2)).unwrap();
    let disc_bits = |t: &Trainer| {
        let d = t.discriminator().unwrap();
        let mut b = param_bits(d.params().iter().map(|p| &p.tensor));
        b.extend(param_bits(d.stats().named().into_iter().map(|(_, t)| t)));
        b
    };
    let initial = disc_bits(&t);
    let gen_initial = param_bits(t.generator().params().iter().map(|p| &p.tensor));
    t.run_epoch(&data, |_| Ok(())).unwrap();
    t.run_epoch(&data, |_| Ok(())).unwrap();
    assert_eq!(disc_bits(&t), initial);
    assert_eq!(t.discriminator_forwards(), 0);
    assert_ne!(
        param_bits(t.generator().params().iter().map(|p| &p.tensor)),
        gen_initial
    );
    t.run_epoch(&data, |_| Ok(())).unwrap();
    assert_ne!(disc_bits(&t), initial);
    assert!(t.discriminator_forwards() > 0);
}

#[test]
fn generator_update_does_not_move_the_discriminator() {
    let data = synthetic_pairs(2, 16, RainPreset::Heavy, 3);
    let run = tiny_run(Variant::GrasppGan, 1, 0);
    let mut t = Trainer::new(&run).unwrap();
    let rainy = Tensor::stack(&[&data[0].rainy, &data[1].rainy]).unwrap();
    let clean = Tensor::stack(&[&data[0].clean, &data[1].clean]).unwrap();

    let mut shadow = t.checkpoint();
    let mut tape = Tape::new();
    let vars = shadow.generator.params().bind(&mut tape, false).unwrap();
    let x = tape.constant(rainy.clone()).unwrap();
    let y = shadow
        .generator
        .forward(&mut tape, &vars, x, NormMode::Train)
        .unwrap();
    let fake = tape.value(y).clone();
    let mut disc = shadow.discriminator.clone().unwrap();
    let mut adam = shadow.adam_d.clone().unwrap();
    discriminator_step(&mut disc, &mut adam, &rainy, &clean, &fake, shadow.lr_d).unwrap();

    let rec = t.step(&rainy, &clean).unwrap();
    assert!(rec.ld.is_some());
    let after = t.discriminator().unwrap();
    assert_eq!(
        param_bits(after.params().iter().map(|p| &p.tensor)),
        param_bits(disc.params().iter().map(|p| &p.tensor))
    );
    assert_eq!(
        param_bits(after.stats().named().into_iter().map(|(_, t)| t)),
        param_bits(disc.stats().named().into_iter().map(|(_, t)| t))
    );
}

fn trained_checkpoint(variant: Variant) -> Checkpoint {
    let data = synthetic_pairs(2, 16, RainPreset::Light, 4);
    let mut t = Trainer::new(&tiny_run(variant, 1, 0)).unwrap();
    t.train(&data, |_| Ok(()), |_, _| Ok(())).unwrap();
    t.into_checkpoint()
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    for variant in [Variant::Raspp, Variant::GrasppGan] {
        let ck = trained_checkpoint(variant);
        let path = dir.path().join(format!("{}.ckpt", variant.name()));
        ck.save(&path).unwrap();
        assert!(!dir
            .path()
            .join(format!("{}.ckpt.partial", variant.name()))
            .exists());
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.to_bytes(), ck.to_bytes());
        assert_eq!(back.run, ck.run);
        assert_eq!(back.history, ck.history);
        assert_eq!(back.discriminator.is_some(), variant.uses_discriminator());
    }
}

#[test]
fn corrupted_checkpoints_fail_with_format_errors() {
    let bytes = trained_checkpoint(Variant::GrasppGan).to_bytes();
    let ck_err = |b: &[u8]| match Checkpoint::from_bytes(b) {
        Err(Error::Checkpoint(e)) => e,
        other => panic!("expected a checkpoint error, got {other:?}"),
    };

    let mut b = bytes.clone();
    b[0] ^= 0xff;
    assert!(matches!(ck_err(&b), CheckpointError::BadMagic));

    let mut b = bytes.clone();
    b[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    assert!(matches!(
        ck_err(&b),
        CheckpointError::VersionMismatch { .. }
    ));

    let mut b = bytes.clone();
    b[20] ^= 0x01;
    assert!(matches!(ck_err(&b), CheckpointError::HeaderChecksum { .. }));

    assert!(matches!(
        ck_err(&bytes[..bytes.len() - 3]),
        CheckpointError::Truncated { .. }
    ));

    let mut b = bytes.clone();
    b.extend_from_slice(&[0, 0, 0, 0]);
    assert!(Checkpoint::from_bytes(&b).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arbitrary_byte_damage_never_panics(pos in any::<prop::sample::Index>(), mask in 1u8..=255) {
        let bytes = trained_checkpoint(Variant::Raspp).to_bytes();
        let mut b = bytes.clone();
        let i = pos.index(b.len());
        b[i] ^= mask;
        if let Ok(ck) = Checkpoint::from_bytes(&b) {
            // Damage inside a float payload is undetectable by design.
            prop_assert_eq!(ck.to_bytes().len(), bytes.len());
        }
        let cut = pos.index(bytes.len());
        prop_assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
    }
}

#[test]
fn resuming_a_discriminator_run_from_a_plain_checkpoint_is_refused() {
    let mut ck = trained_checkpoint(Variant::Raspp);
    ck.run.train.variant = Variant::GrasppGan;
    let err = Trainer::resume(ck).unwrap_err();
    assert!(err.to_string().contains("missing discriminator"), "{err}");

    let mut ck = trained_checkpoint(Variant::Raspp);
    ck.run.train.variant = Variant::GrasppGan;
    let round = Checkpoint::from_bytes(&ck.to_bytes());
    match round {
        Err(e) => assert!(e.to_string().contains("missing discriminator"), "{e}"),
        Ok(c) => assert!(Trainer::resume(c).is_err()),
    }
}

#[test]
fn training_rejects_bad_configurations() {
    let mut run = tiny_run(Variant::Graspp, 1, 2);
    assert!(Trainer::new(&run).is_err());
    run.train.warmup_epochs = 0;
    run.train.crop = 8;
    assert!(Trainer::new(&run).is_err());
    run.train.crop = 32;
    let mut t = Trainer::new(&run).unwrap();
    let small = synthetic_pairs(1, 24, RainPreset::Light, 0);
    assert!(t.run_epoch(&small, |_| Ok(())).is_err());
    assert!(t.run_epoch(&[], |_| Ok(())).is_err());
    let _ = Shape::new(1, 1, 1, 1);
}
