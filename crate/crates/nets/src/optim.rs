use serde::{Deserialize, Serialize};
use tapsense_core::{Error, Result};

use crate::graph::Grads;
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd() -> Self {
        OptimizerKind::Sgd { momentum: 0.9 }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// `lr(epoch) = lr0 * factor^floor(epoch / period)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub factor: f64,
    pub period: usize,
}

impl StepDecay {
    pub fn lr(&self, lr0: f64, epoch: usize) -> f64 {
        lr0 * self.factor.powi((epoch / self.period) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub decay: Option<StepDecay>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Material classifier, first split of the published settings.
    pub fn material() -> Self {
        Self {
            optimizer: OptimizerKind::sgd(),
            lr: 0.00903,
            decay: Some(StepDecay { factor: 0.1, period: 200 }),
            batch_size: 36,
            max_epochs: 300,
            dropout: 0.52105,
            seed: 0,
        }
    }

    pub fn shape() -> Self {
        Self {
            optimizer: OptimizerKind::adam(),
            lr: 5e-6,
            decay: Some(StepDecay { factor: 0.7, period: 500 }),
            batch_size: 500,
            max_epochs: 1000,
            dropout: 0.0,
            seed: 0,
        }
    }

    pub fn reid() -> Self {
        Self {
            optimizer: OptimizerKind::adam(),
            lr: 3.6515e-5,
            decay: None,
            batch_size: 200,
            max_epochs: 500,
            dropout: 0.2348,
            seed: 0,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.decay.map_or(self.lr, |d| d.lr(self.lr, epoch))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("train config: {m}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch size and epoch count must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if let Some(d) = self.decay {
            if d.period == 0 || !(d.factor > 0.0) {
                return bad("decay needs a positive factor and period");
            }
        }
        match self.optimizer {
            OptimizerKind::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => bad("momentum must lie in [0, 1)"),
            OptimizerKind::Adam { beta1, beta2, eps }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) =>
            {
                bad("Adam betas must lie in [0, 1) and eps be positive")
            }
            _ => Ok(()),
        }
    }
}

pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, store: &ParamStore) -> Self {
        let zeros = || store.values().iter().map(|t| vec![0.0; t.len()]).collect();
        Self { kind, m: zeros(), v: zeros(), t: 0 }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64) {
        self.t += 1;
        for (i, g) in grads.0.iter().enumerate() {
            let p = &mut store.values[i].data;
            match self.kind {
                OptimizerKind::Sgd { momentum } => {
                    for ((w, gi), m) in p.iter_mut().zip(g).zip(&mut self.m[i]) {
                        *m = momentum * *m + gi;
                        *w -= lr * *m;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(self.t);
                    let c2 = 1.0 - beta2.powi(self.t);
                    for (((w, gi), m), v) in p.iter_mut().zip(g).zip(&mut self.m[i]).zip(&mut self.v[i]) {
                        *m = beta1 * *m + (1.0 - beta1) * gi;
                        *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn step_decay_is_exact() {
        let d = StepDecay { factor: 0.1, period: 200 };
        assert_eq!(d.lr(1.0, 0), 1.0);
        assert_eq!(d.lr(1.0, 199), 1.0);
        assert_eq!(d.lr(1.0, 200), 0.1);
        assert_eq!(d.lr(2.0, 450), 2.0 * 0.1f64.powi(2));
        let s = TrainConfig::shape();
        assert_eq!(s.lr_at(999), 5e-6 * 0.7);
    }

    #[test]
    fn presets_validate() {
        for c in [TrainConfig::material(), TrainConfig::shape(), TrainConfig::reid()] {
            c.validate().unwrap();
        }
        let mut c = TrainConfig::material();
        c.lr = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn optimizers_descend_a_quadratic() {
        for kind in [OptimizerKind::sgd(), OptimizerKind::adam()] {
            let mut store = ParamStore::new();
            let p = store.add("w", Tensor::new(vec![2], vec![3.0, -2.0]).unwrap());
            let mut opt = Optimizer::new(kind, &store);
            for _ in 0..2000 {
                let g = Grads(vec![store.value(p).data.iter().map(|w| 2.0 * w).collect()]);
                opt.step(&mut store, &g, 0.01);
            }
            assert!(store.value(p).data.iter().all(|w| w.abs() < 0.1), "{kind:?}: {:?}", store.value(p).data);
        }
    }
}
