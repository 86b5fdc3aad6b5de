use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::config::RunConfig;
use crate::data::{random_crop_pair, PairedSample};
use crate::error::{CheckpointError, Error, Result};
use crate::losses::{discriminator_loss_var, total_loss_var};
use crate::model::{Discriminator, Generator};
use crate::ops::NormMode;
use crate::tensor::Tensor;
use crate::train::adam::AdamState;
use crate::train::checkpoint::Checkpoint;
use crate::train::schedule::plateau_update;

/// One line of the step log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// Zero-based epoch the step belongs to.
    pub epoch: usize,
    /// One-based global step number.
    pub step: u64,
    pub l2: f64,
    pub lg: f64,
    pub lgan: f64,
    pub total: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    /// Discriminator loss, when a discriminator update ran.
    pub ld: Option<f64>,
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} step={} l2={:?} lg={:?} lgan={:?} total={:?} lr_g={:?} lr_d={:?}",
            self.epoch, self.step, self.l2, self.lg, self.lgan, self.total, self.lr_g, self.lr_d
        )?;
        if let Some(ld) = self.ld {
            write!(f, " ld={ld:?}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub mean_l2: f64,
    pub mean_lg: f64,
    pub mean_lgan: f64,
    pub mean_total: f64,
    /// Rates after the plateau rule has run.
    pub lr_g: f64,
    pub lr_d: f64,
    pub adversarial: bool,
}

/// One discriminator update on genuine `(rainy, clean)` against generated
/// `(rainy, fake)` pairs, scored in a single joint batch so both halves
/// share normalization statistics. `fake` is a plain tensor, so nothing
/// reaches the generator. Returns the loss before the update.
pub fn discriminator_step(
    disc: &mut Discriminator<f32>,
    adam: &mut AdamState<f32>,
    rainy: &Tensor<f32>,
    clean: &Tensor<f32>,
    fake: &Tensor<f32>,
    lr: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = disc.params().bind(&mut tape, true)?;
    let n = rainy.shape().n;
    let x = tape.constant(Tensor::stack(&[rainy, rainy])?)?;
    let cand = tape.constant(Tensor::stack(&[clean, fake])?)?;
    let p = disc.forward(&mut tape, &vars, x, cand, NormMode::Train)?;
    let p_real = tape.slice_batch(p, 0, n)?;
    let p_fake = tape.slice_batch(p, n, n)?;
    let loss = discriminator_loss_var(&mut tape, p_real, p_fake)?;
    let value = tape.scalar(loss);
    let mut grads = tape.backward(loss)?;
    let g = disc.params().collect_grads(&mut grads, &vars);
    adam.step(disc.params_mut(), &g, lr)?;
    Ok(value)
}

/// Owns the full training state; [`Trainer::checkpoint`] snapshots it.
#[derive(Clone, Debug)]
pub struct Trainer {
    state: Checkpoint,
    d_forwards: u64,
}

impl Trainer {
    pub fn new(run: &RunConfig) -> Result<Self> {
        run.validate()?;
        let generator = Generator::new(run.generator.clone())?;
        let adam_g = AdamState::new(generator.params());
        let (discriminator, adam_d) = if run.train.variant.uses_discriminator() {
            let d = Discriminator::new(run.discriminator.clone())?;
            let a = AdamState::new(d.params());
            (Some(d), Some(a))
        } else {
            (None, None)
        };
        Ok(Trainer {
            state: Checkpoint {
                run: run.clone(),
                generator,
                discriminator,
                adam_g,
                adam_d,
                epoch: 0,
                step: 0,
                history: Vec::new(),
                lr_g: run.train.lr_g,
                lr_d: run.train.lr_d,
                rng: ChaCha8Rng::seed_from_u64(run.train.seed),
            },
            d_forwards: 0,
        })
    }

    /// Continues from `ckpt`. A discriminator-based run refuses a checkpoint
    /// that carries none.
    pub fn resume(ckpt: Checkpoint) -> Result<Self> {
        ckpt.run.validate()?;
        if ckpt.run.train.variant.uses_discriminator() && ckpt.discriminator.is_none() {
            return Err(CheckpointError::MissingDiscriminator {
                variant: ckpt.run.train.variant.label().to_string(),
            }
            .into());
        }
        Ok(Trainer {
            state: ckpt,
            d_forwards: 0,
        })
    }

    pub fn state(&self) -> &Checkpoint {
        &self.state
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.state.clone()
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        self.state
    }

    pub fn generator(&self) -> &Generator<f32> {
        &self.state.generator
    }

    pub fn generator_mut(&mut self) -> &mut Generator<f32> {
        &mut self.state.generator
    }

    pub fn discriminator(&self) -> Option<&Discriminator<f32>> {
        self.state.discriminator.as_ref()
    }

    /// Epochs completed.
    pub fn epoch(&self) -> usize {
        self.state.epoch
    }

    pub fn finished(&self) -> bool {
        self.state.epoch >= self.state.run.train.epochs
    }

    /// Discriminator forward passes run by this trainer instance.
    pub fn discriminator_forwards(&self) -> u64 {
        self.d_forwards
    }

    pub fn adversarial_phase(&self) -> bool {
        let t = &self.state.run.train;
        t.variant.uses_discriminator() && self.state.epoch >= t.warmup_epochs
    }

    /// One optimisation step on a stacked batch. In the adversarial phase the
    /// discriminator is updated first, then the generator through the
    /// updated, frozen discriminator.
    pub fn step(&mut self, rainy: &Tensor<f32>, clean: &Tensor<f32>) -> Result<StepRecord> {
        let adversarial = self.adversarial_phase();
        let s = &mut self.state;
        let train = &s.run.train;
        let mut tape = Tape::new();
        let gv = s.generator.params().bind(&mut tape, true)?;
        let x = tape.constant(rainy.clone())?;
        let g = tape.constant(clean.clone())?;
        let d = s.generator.forward(&mut tape, &gv, x, NormMode::Train)?;

        let mut ld = None;
        let p_fake = if adversarial {
            let (disc, adam_d) = match (s.discriminator.as_mut(), s.adam_d.as_mut()) {
                (Some(d), Some(a)) => (d, a),
                _ => {
                    return Err(CheckpointError::MissingDiscriminator {
                        variant: train.variant.label().to_string(),
                    }
                    .into())
                }
            };
            let fake = tape.value(d).clone();
            ld = Some(discriminator_step(
                disc, adam_d, rainy, clean, &fake, s.lr_d,
            )?);
            let dv = disc.params().bind(&mut tape, false)?;
            let n = rainy.shape().n;
            let xx = tape.concat_batch(&[x, x])?;
            let cand = tape.concat_batch(&[g, d])?;
            let p = disc.forward(&mut tape, &dv, xx, cand, NormMode::TrainFrozen)?;
            self.d_forwards += 2;
            Some(tape.slice_batch(p, n, n)?)
        } else {
            None
        };

        let (loss, b) = total_loss_var(
            &mut tape,
            d,
            g,
            p_fake,
            train.weights,
            train.variant.uses_gradient_loss(),
        )?;
        if !b.total.is_finite() {
            return Err(Error::NonFinite {
                op: "total loss".into(),
            });
        }
        let mut grads = tape.backward(loss)?;
        let gg = s.generator.params().collect_grads(&mut grads, &gv);
        s.adam_g.step(s.generator.params_mut(), &gg, s.lr_g)?;
        s.step += 1;
        Ok(StepRecord {
            epoch: s.epoch,
            step: s.step,
            l2: b.l2,
            lg: b.lg,
            lgan: b.lgan,
            total: b.total,
            lr_g: s.lr_g,
            lr_d: s.lr_d,
            ld,
        })
    }

    /// One pass over `data` in a freshly shuffled order with one random crop
    /// per sample, then the plateau rule. A lone trailing sample joins the
    /// previous batch so train-mode batch statistics always see two items.
    pub fn run_epoch<F>(&mut self, data: &[PairedSample], mut on_step: F) -> Result<EpochSummary>
    where
        F: FnMut(&StepRecord) -> Result<()>,
    {
        if data.is_empty() {
            return Err(Error::Data("no pairs found".into()));
        }
        let adversarial = self.adversarial_phase();
        let (batch, crop) = (self.state.run.train.batch_size, self.state.run.train.crop);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.state.rng);
        let mut sums = [0.0f64; 4];
        let mut steps = 0usize;
        let mut chunks: Vec<&[usize]> = order.chunks(batch).collect();
        if chunks.len() > 1 && chunks[chunks.len() - 1].len() == 1 {
            let n = order.len();
            chunks.pop();
            chunks.pop();
            chunks.push(&order[n - batch - 1..]);
        }
        for chunk in chunks {
            let mut rainy = Vec::with_capacity(chunk.len());
            let mut clean = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let c = random_crop_pair(&data[i], crop, &mut self.state.rng)?;
                rainy.push(c.rainy);
                clean.push(c.clean);
            }
            let rainy = Tensor::stack(&rainy.iter().collect::<Vec<_>>())?;
            let clean = Tensor::stack(&clean.iter().collect::<Vec<_>>())?;
            let rec = self.step(&rainy, &clean)?;
            on_step(&rec)?;
            for (s, v) in sums.iter_mut().zip([rec.l2, rec.lg, rec.lgan, rec.total]) {
                *s += v;
            }
            steps += 1;
        }
        let mean = sums.map(|s| s / steps as f64);
        let s = &mut self.state;
        s.history.push(mean[3]);
        (s.lr_g, s.lr_d) = plateau_update(&s.history, (s.lr_g, s.lr_d), &s.run.train.plateau);
        let epoch = s.epoch;
        s.epoch += 1;
        Ok(EpochSummary {
            epoch,
            steps,
            mean_l2: mean[0],
            mean_lg: mean[1],
            mean_lgan: mean[2],
            mean_total: mean[3],
            lr_g: s.lr_g,
            lr_d: s.lr_d,
            adversarial,
        })
    }

    /// Runs the remaining epochs. `on_epoch` sees the trainer after each
    /// epoch (the place to write checkpoints).
    pub fn train<F, E>(
        &mut self,
        data: &[PairedSample],
        mut on_step: F,
        mut on_epoch: E,
    ) -> Result<()>
    where
        F: FnMut(&StepRecord) -> Result<()>,
        E: FnMut(&EpochSummary, &Trainer) -> Result<()>,
    {
        while !self.finished() {
            let summary = self.run_epoch(data, &mut on_step)?;
            on_epoch(&summary, self)?;
        }
        Ok(())
    }
}
