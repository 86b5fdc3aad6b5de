use crate::error::{Error, Result};
use crate::tensor::{lit, Float, Shape, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Which statistics a normalization layer uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Batch statistics; running statistics are left untouched.
    TrainFrozen,
    /// Running statistics.
    Eval,
}

impl NormMode {
    pub fn uses_batch_stats(self) -> bool {
        !matches!(self, NormMode::Eval)
    }
}

/// Per-channel running mean and (unbiased) variance.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Float> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        let s = Shape::new(1, channels, 1, 1);
        RunningStats {
            mean: Tensor::zeros(s),
            var: Tensor::full(s, T::one()),
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn cast<U: Float>(&self) -> RunningStats<U> {
        RunningStats {
            mean: self.mean.cast(),
            var: self.var.cast(),
        }
    }
}

/// Values saved by the forward pass for [`batchnorm2d_backward`].
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub batch_stats: bool,
}

pub fn batchnorm2d<T: Float>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: &mut RunningStats<T>,
    mode: NormMode,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let s = x.shape();
    let cs = Shape::new(1, s.c, 1, 1);
    gamma.expect_shape(cs, "batchnorm2d gamma")?;
    beta.expect_shape(cs, "batchnorm2d beta")?;
    if running.channels() != s.c {
        return Err(Error::shape(
            "batchnorm2d",
            format!(
                "running stats for {} channels, input has {}",
                running.channels(),
                s.c
            ),
        ));
    }
    let count = s.n * s.plane();
    if mode.uses_batch_stats() && count < 2 {
        return Err(Error::shape(
            "batchnorm2d",
            format!("train mode needs at least 2 values per channel, input {s} has {count}"),
        ));
    }

    let mut inv_std = Vec::with_capacity(s.c);
    let mut shift = Vec::with_capacity(s.c);
    for c in 0..s.c {
        let (mean, var) = if mode.uses_batch_stats() {
            let (mean, var) = channel_moments(x, c);
            if mode == NormMode::Train {
                let m = BN_MOMENTUM;
                let unbiased = var * count as f64 / (count - 1) as f64;
                let rm = &mut running.mean.data_mut()[c];
                *rm = lit::<T>((1.0 - m) * rm.to_f64_lossy() + m * mean);
                let rv = &mut running.var.data_mut()[c];
                *rv = lit::<T>((1.0 - m) * rv.to_f64_lossy() + m * unbiased);
            }
            (mean, var)
        } else {
            (
                running.mean.data()[c].to_f64_lossy(),
                running.var.data()[c].to_f64_lossy(),
            )
        };
        inv_std.push(lit::<T>(1.0 / (var + BN_EPS).sqrt()));
        shift.push(lit::<T>(mean));
    }

    let mut xhat = Tensor::zeros(s);
    let mut out = Tensor::zeros(s);
    let p = s.plane();
    for n in 0..s.n {
        for c in 0..s.c {
            let (g, b, is, m) = (gamma.data()[c], beta.data()[c], inv_std[c], shift[c]);
            let start = (n * s.c + c) * p;
            let src = x.plane(n, c);
            let xh = &mut xhat.data_mut()[start..start + p];
            for (h, &v) in xh.iter_mut().zip(src) {
                *h = (v - m) * is;
            }
            let dst = &mut out.data_mut()[start..start + p];
            for (o, &h) in dst.iter_mut().zip(&xhat.data()[start..start + p]) {
                *o = g * h + b;
            }
        }
    }
    Ok((
        out,
        BnCache {
            xhat,
            inv_std,
            batch_stats: mode.uses_batch_stats(),
        },
    ))
}

/// Mean and biased variance of channel `c`, accumulated in `f64`.
fn channel_moments<T: Float>(x: &Tensor<T>, c: usize) -> (f64, f64) {
    let s = x.shape();
    let count = (s.n * s.plane()) as f64;
    let mut sum = 0.0;
    for n in 0..s.n {
        sum += x.plane(n, c).iter().map(|v| v.to_f64_lossy()).sum::<f64>();
    }
    let mean = sum / count;
    let mut sq = 0.0;
    for n in 0..s.n {
        sq += x
            .plane(n, c)
            .iter()
            .map(|v| {
                let d = v.to_f64_lossy() - mean;
                d * d
            })
            .sum::<f64>();
    }
    (mean, sq / count)
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batchnorm2d_backward<T: Float>(
    grad_out: &Tensor<T>,
    cache: &BnCache<T>,
    gamma: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let s = cache.xhat.shape();
    grad_out.expect_shape(s, "batchnorm2d_backward")?;
    let p = s.plane();
    let count = (s.n * p) as f64;
    let cs = Shape::new(1, s.c, 1, 1);
    let mut ggamma = Tensor::zeros(cs);
    let mut gbeta = Tensor::zeros(cs);
    let mut gx = Tensor::zeros(s);
    for c in 0..s.c {
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for n in 0..s.n {
            let dy = grad_out.plane(n, c);
            let xh = cache.xhat.plane(n, c);
            for (&d, &h) in dy.iter().zip(xh) {
                sum_dy += d.to_f64_lossy();
                sum_dy_xhat += (d * h).to_f64_lossy();
            }
        }
        ggamma.data_mut()[c] = lit(sum_dy_xhat);
        gbeta.data_mut()[c] = lit(sum_dy);
        let scale = gamma.data()[c] * cache.inv_std[c];
        let (mean_dy, mean_dy_xhat) = (lit::<T>(sum_dy / count), lit::<T>(sum_dy_xhat / count));
        for n in 0..s.n {
            let start = (n * s.c + c) * p;
            let dy = grad_out.plane(n, c);
            let xh = cache.xhat.plane(n, c);
            let dst = &mut gx.data_mut()[start..start + p];
            if cache.batch_stats {
                for ((o, &d), &h) in dst.iter_mut().zip(dy).zip(xh) {
                    *o = scale * (d - mean_dy - h * mean_dy_xhat);
                }
            } else {
                for (o, &d) in dst.iter_mut().zip(dy) {
                    *o = scale * d;
                }
            }
        }
    }
    Ok((gx, ggamma, gbeta))
}
