use rand::Rng;
use tapsense_core::Result;

use crate::graph::{Graph, Var};
use crate::params::{Bid, ParamStore, Pid};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Pid,
    pub b: Pid,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let w = store.kaiming(format!("{name}.w"), vec![fan_out, fan_in], fan_in, rng);
        let b = store.uniform(format!("{name}.b"), vec![fan_out], 1.0 / (fan_in as f64).sqrt(), rng);
        Self { w, b, fan_in, fan_out }
    }

    /// Also serves as a kernel-1 Conv1d when rows are points.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.linear(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: Pid,
    pub b: Pid,
    pub stride: usize,
}

impl Conv2d {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let fan_in = cin * k * k;
        let w = store.kaiming(format!("{name}.w"), vec![cout, cin, k, k], fan_in, rng);
        let b = store.uniform(format!("{name}.b"), vec![cout], 1.0 / (fan_in as f64).sqrt(), rng);
        Self { w, b, stride }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.conv2d(x, w, b, self.stride)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Pid,
    pub beta: Pid,
    pub mean: Bid,
    pub var: Bid,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor { shape: vec![channels], data: vec![1.0; channels] }),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(vec![channels])),
            mean: store.add_buffer(format!("{name}.running_mean"), vec![0.0; channels]),
            var: store.add_buffer(format!("{name}.running_var"), vec![1.0; channels]),
        }
    }

    /// Images `[B, C, H, W]`.
    pub fn forward_image(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let inner = s.get(2..).map_or(1, |r| r.iter().product());
        let batch = s.first().copied().unwrap_or(0);
        let (ga, be) = (g.param(self.gamma), g.param(self.beta));
        g.batch_norm(x, ga, be, (self.mean, self.var), inner, batch)
    }

    /// Point features `[P, C]` drawn from `clouds` separate clouds.
    pub fn forward_points(&self, g: &mut Graph, x: Var, clouds: usize) -> Result<Var> {
        let (ga, be) = (g.param(self.gamma), g.param(self.beta));
        g.batch_norm(x, ga, be, (self.mean, self.var), 1, clouds)
    }
}
