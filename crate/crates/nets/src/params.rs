use rand::Rng;
use serde::{Deserialize, Serialize};
use tapsense_core::{Error, Result};

use crate::tensor::Tensor;

/// Index of a trainable tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pid(pub(crate) usize);

/// Index of a non-trainable buffer (batch-norm running statistics).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bid(pub(crate) usize);

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamStore {
    pub(crate) names: Vec<String>,
    pub(crate) values: Vec<Tensor>,
    pub(crate) buffer_names: Vec<String>,
    pub(crate) buffers: Vec<Vec<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Pid {
        self.names.push(name.into());
        self.values.push(value);
        Pid(self.values.len() - 1)
    }

    /// Kaiming-uniform weights with bound `sqrt(6 / fan_in)`.
    pub fn kaiming(&mut self, name: impl Into<String>, shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Pid {
        let bound = (6.0 / fan_in as f64).sqrt();
        self.uniform(name, shape, bound, rng)
    }

    pub fn uniform(&mut self, name: impl Into<String>, shape: Vec<usize>, bound: f64, rng: &mut impl Rng) -> Pid {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.add(name, Tensor { shape, data })
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, data: Vec<f64>) -> Bid {
        self.buffer_names.push(name.into());
        self.buffers.push(data);
        Bid(self.buffers.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn value(&self, p: Pid) -> &Tensor {
        &self.values[p.0]
    }

    pub fn value_mut(&mut self, p: Pid) -> &mut Tensor {
        &mut self.values[p.0]
    }

    pub fn buffer(&self, b: Bid) -> &[f64] {
        &self.buffers[b.0]
    }

    pub fn name(&self, p: Pid) -> &str {
        &self.names[p.0]
    }

    pub fn pids(&self) -> impl Iterator<Item = Pid> {
        (0..self.values.len()).map(Pid)
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Tensor::is_finite)
    }

    /// Layout description: every tensor name and shape, then buffer names and lengths.
    pub fn layout(&self) -> String {
        let mut s = String::new();
        for (n, v) in self.names.iter().zip(&self.values) {
            s.push_str(&format!("{n}:{:?};", v.shape));
        }
        for (n, b) in self.buffer_names.iter().zip(&self.buffers) {
            s.push_str(&format!("{n}:[{}];", b.len()));
        }
        s
    }

    /// Copies values and buffers from a store with the same layout.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.layout() != other.layout() {
            return Err(Error::invalid("parameter layouts differ"));
        }
        self.values.clone_from(&other.values);
        self.buffers.clone_from(&other.buffers);
        Ok(())
    }

    pub(crate) fn set_buffer(&mut self, b: Bid, data: Vec<f64>) {
        debug_assert_eq!(self.buffers[b.0].len(), data.len());
        self.buffers[b.0] = data;
    }
}
