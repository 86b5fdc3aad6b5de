use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::ops::RunningStats;
use crate::tensor::{Float, Shape, Tensor};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub id: String,
    pub tensor: Tensor<T>,
}

/// Ordered collection of named trainable tensors. Insertion order is the
/// canonical order for optimizers and checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Float> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, id: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let id = id.into();
        if self.index.contains_key(&id) {
            return Err(Error::Invalid(format!("duplicate parameter id `{id}`")));
        }
        self.index.insert(id.clone(), self.params.len());
        self.params.push(Parameter { id, tensor });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].tensor
    }

    pub fn find(&self, id: &str) -> Option<ParamId> {
        self.index.get(id).map(|&i| ParamId(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    id: p.id.clone(),
                    tensor: p.tensor.cast(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Places every parameter on `tape` as a leaf; the returned vars are
    /// indexed like the store.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Result<Vec<Var>> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.tensor.clone(), requires_grad))
            .collect()
    }

    /// Gradients for each bound parameter, zero where none reached it.
    pub fn collect_grads(&self, grads: &mut Gradients<T>, bound: &[Var]) -> Vec<Tensor<T>> {
        self.params
            .iter()
            .zip(bound)
            .map(|(p, &v)| {
                grads
                    .take(v)
                    .unwrap_or_else(|| Tensor::zeros(p.tensor.shape()))
            })
            .collect()
    }
}

/// Named non-trainable state (batch-norm running statistics).
#[derive(Clone, Debug, PartialEq)]
pub struct StatsStore<T> {
    entries: Vec<(String, RunningStats<T>)>,
}

impl<T: Float> Default for StatsStore<T> {
    fn default() -> Self {
        StatsStore {
            entries: Vec::new(),
        }
    }
}

impl<T: Float> StatsStore<T> {
    pub fn add(&mut self, prefix: &str, channels: usize) -> usize {
        self.entries
            .push((prefix.to_string(), RunningStats::new(channels)));
        self.entries.len() - 1
    }

    pub fn get_mut(&mut self, i: usize) -> &mut RunningStats<T> {
        &mut self.entries[i].1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(id, tensor)` pairs: `<prefix>.running_mean` then `<prefix>.running_var`.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        self.entries
            .iter()
            .flat_map(|(p, s)| {
                [
                    (format!("{p}.running_mean"), &s.mean),
                    (format!("{p}.running_var"), &s.var),
                ]
            })
            .collect()
    }

    pub fn find_mut(&mut self, id: &str) -> Option<&mut Tensor<T>> {
        for (p, s) in &mut self.entries {
            if let Some(rest) = id.strip_prefix(p.as_str()) {
                match rest {
                    ".running_mean" => return Some(&mut s.mean),
                    ".running_var" => return Some(&mut s.var),
                    _ => {}
                }
            }
        }
        None
    }

    pub fn cast<U: Float>(&self) -> StatsStore<U> {
        StatsStore {
            entries: self
                .entries
                .iter()
                .map(|(p, s)| (p.clone(), s.cast()))
                .collect(),
        }
    }
}

/// Fan-in scaled Gaussian `N(0, 2 / fan_in)`, drawn in `f64`.
pub(crate) fn he_normal<T: Float, R: Rng>(shape: Shape, fan_in: usize, rng: &mut R) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape, |_, _, _, _| T::from_f64_lossy(dist.sample(rng)))
}
