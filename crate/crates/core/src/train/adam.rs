use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::{lit, Float, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moments for every parameter of one store, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// Number of updates applied so far.
    pub t: u64,
}

impl<T: Float> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params
            .iter()
            .map(|p| Tensor::zeros(p.tensor.shape()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One bias-corrected update. Every gradient is validated before any
    /// parameter or moment is touched, so a rejected step leaves no trace.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Invalid(format!(
                "adam: {} gradients and {} moment slots for {} parameters",
                grads.len(),
                self.m.len(),
                params.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            g.expect_shape(p.tensor.shape(), "adam gradient")?;
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    op: format!("gradient of parameter `{}`", p.id),
                });
            }
        }
        self.t += 1;
        let t = self.t.min(i32::MAX as u64) as i32;
        let bc1: T = lit(1.0 - ADAM_BETA1.powi(t));
        let bc2: T = lit(1.0 - ADAM_BETA2.powi(t));
        let (b1, b2, eps, lr): (T, T, T, T) =
            (lit(ADAM_BETA1), lit(ADAM_BETA2), lit(ADAM_EPS), lit(lr));
        let one = T::one();
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((theta, &g), m), v) in p
                .tensor
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
