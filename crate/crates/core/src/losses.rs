//! Training objective: pixel MSE, Sobel gradient-domain MSE, and the
//! cross-entropy adversarial terms, combined as `l2 + α·lg + β·lgan`.
//!
//! The `*_var` functions record on a [`Tape`] and are what training
//! differentiates; the tensor-level functions evaluate the same graph for
//! reporting and tests.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::ops::{Pad2d, PaddingMode};
use crate::tensor::{Float, Tensor};

/// Horizontal derivative kernel (cross-correlation orientation).
pub const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
/// Vertical derivative kernel, the transpose of [`SOBEL_X`].
pub const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Probabilities are clamped to `[PROB_EPS, 1 − PROB_EPS]` before any log.
pub const PROB_EPS: f64 = 1e-7;

/// The fixed Sobel pair. These are constants of the loss, not parameters:
/// no optimizer ever sees them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SobelKernels {
    pub gx: [[f64; 3]; 3],
    pub gy: [[f64; 3]; 3],
}

impl Default for SobelKernels {
    fn default() -> Self {
        SobelKernels {
            gx: SOBEL_X,
            gy: SOBEL_Y,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 0.001,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0
            && self.beta >= 0.0
            && self.alpha.is_finite()
            && self.beta.is_finite())
        {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Per-term values of one evaluation of the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l2: f64,
    pub lg: f64,
    pub lgan: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l2: f64, lg: f64, lgan: f64, weights: LossWeights) -> Self {
        LossBreakdown {
            l2,
            lg,
            lgan,
            total: l2 + weights.alpha * lg + weights.beta * lgan,
        }
    }
}

/// Depthwise Sobel responses `(∇x, ∇y)` with a symmetric 1-pixel border.
pub fn sobel_gradients_var<T: Float>(tape: &mut Tape<T>, image: Var) -> Result<(Var, Var)> {
    let s = tape.shape(image);
    if s.h < 3 || s.w < 3 {
        return Err(Error::shape(
            "sobel_gradients",
            format!("input {s} is smaller than 3x3"),
        ));
    }
    let padded = tape.pad(image, PaddingMode::Symmetric, Pad2d::uniform(1))?;
    let gx = tape.depthwise3x3(padded, SOBEL_X)?;
    let gy = tape.depthwise3x3(padded, SOBEL_Y)?;
    Ok((gx, gy))
}

pub fn l2_loss_var<T: Float>(tape: &mut Tape<T>, d: Var, g: Var) -> Result<Var> {
    tape.mse(d, g)
}

/// `MSE(∇x d, ∇x g) + MSE(∇y d, ∇y g)`; averaging per sample then over the
/// batch equals the global mean because every sample has the same size.
pub fn gradient_loss_var<T: Float>(tape: &mut Tape<T>, d: Var, g: Var) -> Result<Var> {
    if tape.shape(d) != tape.shape(g) {
        return Err(Error::shape(
            "gradient_loss",
            format!("{} vs {}", tape.shape(d), tape.shape(g)),
        ));
    }
    let (dx, dy) = sobel_gradients_var(tape, d)?;
    let (gx, gy) = sobel_gradients_var(tape, g)?;
    let lx = tape.mse(dx, gx)?;
    let ly = tape.mse(dy, gy)?;
    tape.combine(&[(lx, 1.0), (ly, 1.0)])
}

/// `mean(−log D(x, g)) + mean(−log(1 − D(x, d)))`.
pub fn discriminator_loss_var<T: Float>(
    tape: &mut Tape<T>,
    p_real: Var,
    p_fake: Var,
) -> Result<Var> {
    let real = tape.neg_log(p_real, false, PROB_EPS)?;
    let fake = tape.neg_log(p_fake, true, PROB_EPS)?;
    tape.combine(&[(real, 1.0), (fake, 1.0)])
}

/// Non-saturating generator loss `mean(−log D(x, G(x)))`.
pub fn adversarial_g_loss_var<T: Float>(tape: &mut Tape<T>, p_fake: Var) -> Result<Var> {
    tape.neg_log(p_fake, false, PROB_EPS)
}

/// Records the weighted objective. With `p_fake == None` the adversarial
/// term is absent (warmup and the non-adversarial variants).
pub fn total_loss_var<T: Float>(
    tape: &mut Tape<T>,
    d: Var,
    g: Var,
    p_fake: Option<Var>,
    weights: LossWeights,
    include_gradient: bool,
) -> Result<(Var, LossBreakdown)> {
    let l2 = l2_loss_var(tape, d, g)?;
    let mut terms = vec![(l2, 1.0)];
    let mut lg_val = 0.0;
    if include_gradient {
        let lg = gradient_loss_var(tape, d, g)?;
        lg_val = tape.scalar(lg);
        terms.push((lg, weights.alpha));
    }
    let mut lgan_val = 0.0;
    if let Some(p) = p_fake {
        let lgan = adversarial_g_loss_var(tape, p)?;
        lgan_val = tape.scalar(lgan);
        terms.push((lgan, weights.beta));
    }
    let total = tape.combine(&terms)?;
    let breakdown = LossBreakdown::new(tape.scalar(l2), lg_val, lgan_val, weights);
    Ok((total, breakdown))
}

fn constants<T: Float>(tape: &mut Tape<T>, xs: &[&Tensor<T>]) -> Result<Vec<Var>> {
    xs.iter().map(|t| tape.constant((*t).clone())).collect()
}

pub fn sobel_gradients<T: Float>(image: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut tape = Tape::new();
    let x = tape.constant(image.clone())?;
    let (gx, gy) = sobel_gradients_var(&mut tape, x)?;
    Ok((tape.value(gx).clone(), tape.value(gy).clone()))
}

pub fn l2_loss<T: Float>(d: &Tensor<T>, g: &Tensor<T>) -> Result<f64> {
    let mut tape = Tape::new();
    let v = constants(&mut tape, &[d, g])?;
    let l = l2_loss_var(&mut tape, v[0], v[1])?;
    Ok(tape.scalar(l))
}

pub fn gradient_loss<T: Float>(d: &Tensor<T>, g: &Tensor<T>) -> Result<f64> {
    let mut tape = Tape::new();
    let v = constants(&mut tape, &[d, g])?;
    let l = gradient_loss_var(&mut tape, v[0], v[1])?;
    Ok(tape.scalar(l))
}

pub fn discriminator_loss<T: Float>(p_real: &Tensor<T>, p_fake: &Tensor<T>) -> Result<f64> {
    let mut tape = Tape::new();
    let v = constants(&mut tape, &[p_real, p_fake])?;
    let l = discriminator_loss_var(&mut tape, v[0], v[1])?;
    Ok(tape.scalar(l))
}

pub fn adversarial_g_loss<T: Float>(p_fake: &Tensor<T>) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(p_fake.clone())?;
    let l = adversarial_g_loss_var(&mut tape, p)?;
    Ok(tape.scalar(l))
}

/// Value-only evaluation of the full objective. `p_fake` is only read when
/// `include_gan` is set.
pub fn total_loss<T: Float>(
    d: &Tensor<T>,
    g: &Tensor<T>,
    p_fake: Option<&Tensor<T>>,
    weights: LossWeights,
    include_gan: bool,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let v = constants(&mut tape, &[d, g])?;
    let p = if include_gan {
        let p = p_fake.ok_or_else(|| {
            Error::Invalid("adversarial term requested without discriminator output".into())
        })?;
        Some(tape.constant(p.clone())?)
    } else {
        None
    };
    let (_, breakdown) = total_loss_var(&mut tape, v[0], v[1], p, weights, true)?;
    Ok(breakdown)
}
