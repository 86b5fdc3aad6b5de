//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value and what it
//! needs to propagate gradients. [`Tape::backward`] walks the tape once in
//! reverse. Nodes whose inputs all have `requires_grad == false` are never
//! differentiated, which is how data inputs and frozen networks stay cheap.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ops::{self, BnCache, ConvSpec, NormMode, Pad2d, PaddingMode, RunningStats};
use crate::tensor::{lit, Float, Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Pad {
        x: Var,
        mode: PaddingMode,
        amount: Pad2d,
    },
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: BnCache<T>,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Relu {
        x: Var,
    },
    Clamp {
        x: Var,
        bound: f64,
    },
    Sigmoid {
        x: Var,
    },
    GlobalAvgPool {
        x: Var,
    },
    MaxPool {
        x: Var,
        padding: PaddingMode,
        argmax: Vec<usize>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Concat {
        xs: Vec<Var>,
    },
    ConcatBatch {
        xs: Vec<Var>,
    },
    SliceBatch {
        x: Var,
        start: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Depthwise3x3 {
        x: Var,
        kernel: [[f64; 3]; 3],
    },
    Mse {
        a: Var,
        b: Var,
    },
    WeightedSum {
        x: Var,
        weights: Tensor<T>,
    },
    NegLog {
        p: Var,
        complement: bool,
        eps: f64,
    },
    Combine {
        terms: Vec<(Var, f64)>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every leaf that requires them.
#[derive(Debug)]
pub struct Gradients<T> {
    leaves: HashMap<Var, Tensor<T>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.leaves.remove(&v)
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0].to_f64_lossy()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        value.ensure_finite("leaf")?;
        Ok(self.push_node(value, Op::Leaf, requires_grad))
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        value.ensure_finite(name)?;
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_node(value, op, rg))
    }

    pub fn pad(&mut self, x: Var, mode: PaddingMode, amount: Pad2d) -> Result<Var> {
        let y = ops::pad(self.value(x), mode, amount)?;
        self.push("pad", y, Op::Pad { x, mode, amount }, &[x])
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let y = ops::conv2d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &spec,
        )?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("conv2d", y, Op::Conv { x, w, b, spec }, &inputs)
    }

    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats<T>,
        mode: NormMode,
    ) -> Result<Var> {
        let (y, cache) = ops::batchnorm2d(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running,
            mode,
        )?;
        self.push(
            "batchnorm2d",
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
            },
            &[x, gamma, beta],
        )
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let y = ops::leaky_relu(self.value(x), slope)?;
        self.push("leaky_relu", y, Op::LeakyRelu { x, slope }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let y = ops::relu(self.value(x));
        self.push("relu", y, Op::Relu { x }, &[x])
    }

    pub fn clamp_symmetric(&mut self, x: Var, bound: f64) -> Result<Var> {
        let y = ops::clamp_symmetric(self.value(x), bound)?;
        self.push("clamp_symmetric", y, Op::Clamp { x, bound }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let y = ops::sigmoid(self.value(x));
        self.push("sigmoid", y, Op::Sigmoid { x }, &[x])
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let y = ops::global_avg_pool(self.value(x));
        self.push("global_avg_pool", y, Op::GlobalAvgPool { x }, &[x])
    }

    pub fn maxpool3x3_s1(&mut self, x: Var, padding: PaddingMode) -> Result<Var> {
        let (y, argmax) = ops::maxpool3x3_s1(self.value(x), padding)?;
        self.push("maxpool3x3_s1", y, Op::MaxPool { x, padding, argmax }, &[x])
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = ops::linear(self.value(x), self.value(w), self.value(b))?;
        self.push("linear", y, Op::Linear { x, w, b }, &[x, w, b])
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let y = ops::concat_channels(&vals)?;
        self.push("concat_channels", y, Op::Concat { xs: xs.to_vec() }, xs)
    }

    /// Stacks inputs along the batch axis.
    pub fn concat_batch(&mut self, xs: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let y = Tensor::stack(&vals)?;
        self.push("concat_batch", y, Op::ConcatBatch { xs: xs.to_vec() }, xs)
    }

    /// Samples `[start, start+len)` of `x`.
    pub fn slice_batch(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let y = self.value(x).batch_range(start, len)?;
        self.push("slice_batch", y, Op::SliceBatch { x, start }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |p, q| p + q)?;
        self.push("add", y, Op::Add { a, b }, &[a, b])
    }

    /// Fixed-kernel depthwise 3×3 correlation over the valid region of `x`.
    pub fn depthwise3x3(&mut self, x: Var, kernel: [[f64; 3]; 3]) -> Result<Var> {
        let y = ops::depthwise3x3(self.value(x), &kernel)?;
        self.push("depthwise3x3", y, Op::Depthwise3x3 { x, kernel }, &[x])
    }

    /// Mean squared difference over all elements, as a scalar node.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(
                "mse",
                format!("{} vs {}", va.shape(), vb.shape()),
            ));
        }
        let sum: f64 = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&p, &q)| {
                let d = (p - q).to_f64_lossy();
                d * d
            })
            .sum();
        let y = Tensor::scalar(lit(sum / va.len() as f64));
        self.push("mse", y, Op::Mse { a, b }, &[a, b])
    }

    /// `Σ weights ⊙ x` as a scalar node.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        self.value(x)
            .expect_shape(weights.shape(), "weighted_sum")?;
        let s: f64 = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &w)| (a * w).to_f64_lossy())
            .sum();
        self.push(
            "weighted_sum",
            Tensor::scalar(lit(s)),
            Op::WeightedSum { x, weights },
            &[x],
        )
    }

    /// Mean of `−log(p)` (or `−log(1−p)` when `complement`), with `p`
    /// clamped to `[eps, 1−eps]` first. Clamped entries pass no gradient.
    pub fn neg_log(&mut self, p: Var, complement: bool, eps: f64) -> Result<Var> {
        let v = self.value(p);
        let mut sum = 0.0;
        for &q in v.data() {
            let q = q.to_f64_lossy();
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::Invalid(format!(
                    "probability {q} outside [0, 1] reached a log loss"
                )));
            }
            let q = q.clamp(eps, 1.0 - eps);
            sum -= if complement { (1.0 - q).ln() } else { q.ln() };
        }
        let y = Tensor::scalar(lit(sum / v.len() as f64));
        self.push("neg_log", y, Op::NegLog { p, complement, eps }, &[p])
    }

    /// `Σ coeff·term` over scalar nodes.
    pub fn combine(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut s = 0.0;
        for &(v, k) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(Error::shape(
                    "combine",
                    format!("term {} is not a scalar", t.shape()),
                ));
            }
            s += k * t.data()[0].to_f64_lossy();
        }
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        self.push(
            "combine",
            Tensor::scalar(lit(s)),
            Op::Combine {
                terms: terms.to_vec(),
            },
            &inputs,
        )
    }

    /// Gradients of scalar node `loss` with respect to every leaf created
    /// with `requires_grad`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = self.value(loss);
        if root.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, found {}", root.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.shape(), T::one()));
        let mut leaves = HashMap::new();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let mut send = |v: Var, t: Tensor<T>| -> Result<()> {
                if !self.nodes[v.0].requires_grad {
                    return Ok(());
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot @ None => {
                        *slot = Some(t);
                        Ok(())
                    }
                }
            };
            match &node.op {
                Op::Leaf => {
                    leaves.insert(Var(i), g);
                }
                Op::Pad { x, mode, amount } => {
                    send(
                        *x,
                        ops::pad_backward(&g, self.value(*x).shape(), *mode, *amount)?,
                    )?;
                }
                Op::Conv { x, w, b, spec } => {
                    let grads = ops::conv::conv2d_backward_with(
                        &g,
                        self.value(*x),
                        self.value(*w),
                        spec,
                        self.requires_grad(*x),
                        self.requires_grad(*w),
                    )?;
                    if let Some(gi) = grads.input {
                        send(*x, gi)?;
                    }
                    send(*w, grads.weight)?;
                    if let Some(b) = b {
                        send(*b, grads.bias)?;
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    cache,
                } => {
                    let (gx, gg, gb) = ops::batchnorm2d_backward(&g, cache, self.value(*gamma))?;
                    send(*x, gx)?;
                    send(*gamma, gg)?;
                    send(*beta, gb)?;
                }
                Op::LeakyRelu { x, slope } => {
                    send(*x, ops::leaky_relu_backward(&g, self.value(*x), *slope)?)?;
                }
                Op::Relu { x } => {
                    send(*x, ops::relu_backward(&g, self.value(*x))?)?;
                }
                Op::Clamp { x, bound } => {
                    send(
                        *x,
                        ops::clamp_symmetric_backward(&g, self.value(*x), *bound)?,
                    )?;
                }
                Op::Sigmoid { x } => {
                    send(*x, ops::sigmoid_backward(&g, &node.value)?)?;
                }
                Op::GlobalAvgPool { x } => {
                    send(
                        *x,
                        ops::global_avg_pool_backward(&g, self.value(*x).shape())?,
                    )?;
                }
                Op::MaxPool { x, padding, argmax } => {
                    let shape = self.value(*x).shape();
                    send(
                        *x,
                        ops::maxpool3x3_s1_backward(&g, argmax, shape, *padding)?,
                    )?;
                }
                Op::Linear { x, w, b } => {
                    let (gx, gw, gb) = ops::linear_backward(&g, self.value(*x), self.value(*w))?;
                    send(*x, gx)?;
                    send(*w, gw)?;
                    send(*b, gb)?;
                }
                Op::Concat { xs } => {
                    let channels: Vec<usize> =
                        xs.iter().map(|&v| self.value(v).shape().c).collect();
                    for (v, part) in xs.iter().zip(ops::concat_channels_backward(&g, &channels)?) {
                        send(*v, part)?;
                    }
                }
                Op::ConcatBatch { xs } => {
                    let mut start = 0;
                    for &v in xs {
                        let n = self.value(v).shape().n;
                        send(v, g.batch_range(start, n)?)?;
                        start += n;
                    }
                }
                Op::SliceBatch { x, start } => {
                    let mut full = Tensor::zeros(self.value(*x).shape());
                    let per = g.len() / g.shape().n;
                    full.data_mut()[start * per..start * per + g.len()].copy_from_slice(g.data());
                    send(*x, full)?;
                }
                Op::Add { a, b } => {
                    send(*a, g.clone())?;
                    send(*b, g)?;
                }
                Op::Depthwise3x3 { x, kernel } => {
                    let shape = self.value(*x).shape();
                    send(*x, ops::depthwise3x3_backward(&g, shape, kernel)?)?;
                }
                Op::Mse { a, b } => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let k = g.data()[0] * lit::<T>(2.0 / va.len() as f64);
                    let da = va.zip_map(vb, |p, q| k * (p - q))?;
                    if self.requires_grad(*b) {
                        send(*b, da.map(|v| -v))?;
                    }
                    send(*a, da)?;
                }
                Op::WeightedSum { x, weights } => {
                    let k = g.data()[0];
                    send(*x, weights.map(|w| w * k))?;
                }
                Op::NegLog { p, complement, eps } => {
                    let v = self.value(*p);
                    let k = g.data()[0].to_f64_lossy() / v.len() as f64;
                    let gp = v.map(|q| {
                        let qf = q.to_f64_lossy();
                        if qf < *eps || qf > 1.0 - eps {
                            T::zero()
                        } else if *complement {
                            lit(k / (1.0 - qf))
                        } else {
                            lit(-k / qf)
                        }
                    });
                    send(*p, gp)?;
                }
                Op::Combine { terms } => {
                    for &(v, k) in terms {
                        send(v, Tensor::scalar(g.data()[0] * lit::<T>(k)))?;
                    }
                }
            }
        }
        Ok(Gradients { leaves })
    }
}

impl<T: Float> Tape<T> {
    /// Shape of a node's value.
    pub fn shape(&self, v: Var) -> Shape {
        self.value(v).shape()
    }
}
