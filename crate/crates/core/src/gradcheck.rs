//! Central-difference verification of tape gradients (64-bit only).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Denominator floor of the relative error, so that exactly-zero gradients
/// compare by absolute difference instead of dividing by zero.
pub const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Probe at most this many coordinates per input (chosen with `seed`);
    /// `None` probes every coordinate.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl GradCheckOptions {
    pub fn new(eps: f64, tol: f64) -> Self {
        GradCheckOptions {
            eps,
            tol,
            max_coords: None,
            seed: 0,
        }
    }

    pub fn sampled(mut self, max_coords: usize, seed: u64) -> Self {
        self.max_coords = Some(max_coords);
        self.seed = seed;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coordinate {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub worst: Option<Coordinate>,
    pub checked: usize,
    pub tol: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences `(f(x+eps) − f(x−eps)) / 2eps`, coordinate by coordinate.
///
/// `f` receives a fresh tape and one leaf per entry of `inputs`.
pub fn gradient_check<F>(
    mut f: F,
    inputs: &[Tensor<f64>],
    opts: GradCheckOptions,
) -> Result<GradReport>
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&opts.eps) {
        return Err(Error::Invalid(format!(
            "finite-difference step {} outside [1e-7, 1e-3]",
            opts.eps
        )));
    }
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.leaf(t.clone(), true))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let mut grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    drop(tape);

    let mut eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut t = Tape::new();
        let vs = values
            .iter()
            .map(|v| t.leaf(v.clone(), false))
            .collect::<Result<Vec<_>>>()?;
        let o = f(&mut t, &vs)?;
        let y = t.scalar(o);
        if !y.is_finite() {
            return Err(Error::NonFinite {
                op: "gradient_check objective".into(),
            });
        }
        Ok(y)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = inputs.to_vec();
    let mut report = GradReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        tol: opts.tol,
    };
    for (k, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = match opts.max_coords {
            Some(m) if m < input.len() => {
                let mut c = sample(&mut rng, input.len(), m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..input.len()).collect(),
        };
        for idx in coords {
            let x0 = input.data()[idx];
            probe[k].data_mut()[idx] = x0 + opts.eps;
            let plus = eval(&probe)?;
            probe[k].data_mut()[idx] = x0 - opts.eps;
            let minus = eval(&probe)?;
            probe[k].data_mut()[idx] = x0;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic[k].data()[idx];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some(Coordinate {
                    input: k,
                    index: idx,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
