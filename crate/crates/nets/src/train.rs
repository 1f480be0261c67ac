use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tapsense_core::dataset::blend_fraction;
use tapsense_core::{Error, Result};

use crate::graph::{apply_stat_updates, Graph, Var};
use crate::models::Network;
use crate::optim::{Optimizer, TrainConfig};
use crate::params::ParamStore;

/// Where each epoch's training items come from.
pub enum EpochSource<'a, T> {
    Plain(&'a [T]),
    /// Synthetic/real mix following the blending schedule. When one side is
    /// empty the other supplies every epoch.
    Blend { synthetic: &'a [T], real: &'a [T] },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Maximize,
    Minimize,
}

impl Objective {
    /// Ties count as improvements so a saturated metric keeps the later epoch.
    fn better(self, new: f64, old: f64) -> bool {
        match self {
            Objective::Maximize => new >= old,
            Objective::Minimize => new <= old,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_metric: f64,
    pub synthetic_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub best_epoch: usize,
    pub best_metric: f64,
    pub history: Vec<EpochMetrics>,
}

impl TrainOutcome {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut s = String::from("epoch,lr,train_loss,val_metric,synthetic_fraction\n");
        for m in &self.history {
            s.push_str(&format!(
                "{},{:?},{:?},{:?},{}\n",
                m.epoch,
                m.lr,
                m.train_loss,
                m.val_metric,
                m.synthetic_fraction.map_or(String::new(), |f| format!("{f:?}"))
            ));
        }
        f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Cycles through a pool in reshuffled passes. Picks are tagged with
/// whether they come from the first pool.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn new(n: usize) -> Self {
        Self { order: (0..n).collect(), pos: n }
    }

    fn take(&mut self, k: usize, rng: &mut ChaCha8Rng, out: &mut Vec<(bool, usize)>, first: bool) {
        for _ in 0..k {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push((first, self.order[self.pos]));
            self.pos += 1;
        }
    }
}

fn mix_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    seed ^ ((epoch as u64) << 32 | batch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Mini-batch training with per-epoch validation. The parameters with the
/// best validation metric are restored at the end.
pub fn train<N: Network, T>(
    net: &mut N,
    source: EpochSource<T>,
    cfg: &TrainConfig,
    objective: Objective,
    mut loss: impl FnMut(&N, &mut Graph, &[&T]) -> Result<Var>,
    mut validate: impl FnMut(&N) -> Result<f64>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (pool_a, pool_b): (&[T], &[T]) = match &source {
        EpochSource::Plain(items) => (items, &[]),
        EpochSource::Blend { synthetic, real } => (synthetic, real),
    };
    let total = pool_a.len() + pool_b.len();
    if total == 0 {
        return Err(Error::invalid("no training items"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut cyc_a, mut cyc_b) = (Cycler::new(pool_a.len()), Cycler::new(pool_b.len()));
    let mut opt = Optimizer::new(cfg.optimizer, net.store());
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut history = Vec::with_capacity(cfg.max_epochs);
    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr_at(epoch);
        let mut picks = Vec::with_capacity(total);
        let fraction = match source {
            EpochSource::Plain(_) => {
                cyc_a.take(total, &mut rng, &mut picks, true);
                None
            }
            EpochSource::Blend { .. } => {
                let f = blend_fraction(epoch)?;
                let n_syn = if pool_b.is_empty() {
                    total
                } else if pool_a.is_empty() {
                    0
                } else {
                    (f * total as f64).round() as usize
                };
                cyc_a.take(n_syn, &mut rng, &mut picks, true);
                cyc_b.take(total - n_syn, &mut rng, &mut picks, false);
                picks.shuffle(&mut rng);
                Some(f)
            }
        };
        let mut loss_sum = 0.0;
        for (bi, chunk) in picks.chunks(cfg.batch_size).enumerate() {
            let items: Vec<&T> = chunk
                .iter()
                .map(|&(first, i)| if first { &pool_a[i] } else { &pool_b[i] })
                .collect();
            let (value, grads, updates) = {
                let mut g = Graph::new(net.store(), true, mix_seed(cfg.seed, epoch, bi));
                let l = loss(net, &mut g, &items)?;
                let value = g.value(l).data[0];
                if !value.is_finite() {
                    return Err(Error::invalid(format!("non-finite loss {value} at epoch {epoch}, batch {bi}")));
                }
                let grads = g.backward(l)?;
                if !grads.is_finite() {
                    return Err(Error::invalid(format!("non-finite gradient at epoch {epoch}, batch {bi}")));
                }
                (value, grads, g.take_stat_updates())
            };
            opt.step(net.store_mut(), &grads, lr);
            apply_stat_updates(net.store_mut(), &updates);
            loss_sum += value * chunk.len() as f64;
        }
        if !net.store().is_finite() {
            return Err(Error::invalid(format!("parameters diverged at epoch {epoch}")));
        }
        let val_metric = validate(net)?;
        let train_loss = loss_sum / total as f64;
        log::debug!("epoch {epoch}: lr {lr:.3e} loss {train_loss:.5} val {val_metric:.5}");
        history.push(EpochMetrics { epoch, lr, train_loss, val_metric, synthetic_fraction: fraction });
        if best.as_ref().is_none_or(|b| objective.better(val_metric, b.1)) {
            best = Some((epoch, val_metric, net.store().clone()));
        }
    }
    let (best_epoch, best_metric, params) = best.expect("at least one epoch");
    net.store_mut().load_from(&params)?;
    Ok(TrainOutcome { best_epoch, best_metric, history })
}
