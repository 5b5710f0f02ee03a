use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tape::Gradients;
use crate::Tensor;

/// Index of a [`Parameter`] inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor together with its Adam moment accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step_count: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let len = value.len();
        Self {
            name: name.into(),
            value,
            grad: None,
            adam_m: vec![0.0; len],
            adam_v: vec![0.0; len],
            step_count: 0,
        }
    }
}

/// Ordered collection of named parameters. Insertion order is stable and is
/// the order used for checkpoints and optimizer sweeps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn push(&mut self, param: Parameter) -> ParamId {
        self.params.push(param);
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar values over all parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Adds `scale * grad` into each parameter's gradient slot. Parameters that
    /// did not take part in the recorded expression receive zeros, so every
    /// parameter has a populated gradient afterwards.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) {
        for (i, p) in self.params.iter_mut().enumerate() {
            let slot = p
                .grad
                .get_or_insert_with(|| Tensor::zeros(p.value.shape()));
            if let Some(g) = grads.param(ParamId(i)) {
                for (s, &v) in slot.data_mut().iter_mut().zip(g) {
                    *s += scale * v;
                }
            }
        }
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }
}

/// Normal samples with standard deviation `std`, redrawn until they fall
/// within two standard deviations.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| loop {
            let z: f64 = normal.sample(rng);
            if z.abs() <= 2.0 {
                break z * std;
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape matches by construction")
}

/// He/Kaiming normal initialization with fan-in scaling.
pub fn kaiming_normal<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape, data).expect("shape matches by construction")
}
