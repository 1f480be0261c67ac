use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tapsense_nets::models::argmax;
use tapsense_nets::{train, EpochSource, MaterialNet, Network, Objective, OptimizerKind, TrainConfig};

/// Two classes of 64x64 inputs: energy in the upper or lower half.
fn toy(n: usize, seed: u64) -> Vec<(Vec<f64>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let x = (0..64 * 64)
                .map(|j| {
                    let upper = j < 32 * 64;
                    let base = if upper == (label == 0) { 1.0 } else { -1.0 };
                    base + rng.random_range(-0.5..0.5)
                })
                .collect();
            (x, label)
        })
        .collect()
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        optimizer: OptimizerKind::sgd(),
        lr: 0.01,
        decay: None,
        batch_size: 8,
        max_epochs: epochs,
        dropout: 0.2,
        seed: 3,
    }
}

fn accuracy(net: &MaterialNet, data: &[(Vec<f64>, usize)]) -> f64 {
    data.iter().filter(|(x, y)| argmax(&net.logits(x).unwrap()) == *y).count() as f64 / data.len() as f64
}

fn run(epochs: usize) -> (MaterialNet, tapsense_nets::TrainOutcome) {
    let data = toy(24, 1);
    let val = toy(8, 2);
    let c = cfg(epochs);
    let mut net = MaterialNet::new(2, c.dropout, 0);
    let out = train(
        &mut net,
        EpochSource::Plain(&data),
        &c,
        Objective::Maximize,
        |n, g, batch| {
            let xs: Vec<&[f64]> = batch.iter().map(|(x, _)| x.as_slice()).collect();
            let ys: Vec<usize> = batch.iter().map(|(_, y)| *y).collect();
            let logits = n.forward(g, &xs)?;
            g.cross_entropy(logits, &ys)
        },
        |n| Ok(accuracy(n, &val)),
    )
    .unwrap();
    (net, out)
}

#[test]
fn toy_problem_is_learned() {
    let (net, out) = run(50);
    let first = out.history[0].train_loss;
    let last = out.history.last().unwrap().train_loss;
    assert!(last < first, "{first} -> {last}");
    assert!(accuracy(&net, &toy(24, 1)) >= 0.95);
    assert_eq!(out.history.len(), 50);
}

#[test]
fn training_is_reproducible() {
    let (a, oa) = run(3);
    let (b, ob) = run(3);
    assert_eq!(oa, ob);
    assert_eq!(a.store(), b.store());
}

#[test]
fn divergence_aborts() {
    let data = toy(4, 1);
    let mut c = cfg(2);
    c.lr = 1e300;
    let mut net = MaterialNet::new(2, 0.0, 0);
    let r = train(
        &mut net,
        EpochSource::Plain(&data),
        &c,
        Objective::Maximize,
        |n, g, batch| {
            let xs: Vec<&[f64]> = batch.iter().map(|(x, _)| x.as_slice()).collect();
            let ys: Vec<usize> = batch.iter().map(|(_, y)| *y).collect();
            let logits = n.forward(g, &xs)?;
            g.cross_entropy(logits, &ys)
        },
        |_| Ok(0.0),
    );
    assert!(r.is_err());
}

#[test]
fn blend_mix_follows_schedule() {
    // items are tagged by origin; the loss records how many synthetic ones each epoch sees
    let synthetic = vec![(vec![0.0; 4096], 0); 10];
    let real = vec![(vec![0.0; 4096], 1); 10];
    let mut c = cfg(1);
    c.max_epochs = 1;
    let mut net = MaterialNet::new(2, 0.0, 0);
    let seen = std::cell::RefCell::new(Vec::new());
    train(
        &mut net,
        EpochSource::Blend { synthetic: &synthetic, real: &real },
        &c,
        Objective::Maximize,
        |n, g, batch| {
            seen.borrow_mut().extend(batch.iter().map(|(_, y)| *y));
            let xs: Vec<&[f64]> = batch.iter().map(|(x, _)| x.as_slice()).collect();
            let ys: Vec<usize> = batch.iter().map(|(_, y)| *y).collect();
            let logits = n.forward(g, &xs)?;
            g.cross_entropy(logits, &ys)
        },
        |_| Ok(0.0),
    )
    .unwrap();
    // epoch 0 is fully synthetic
    assert_eq!(seen.borrow().len(), 20);
    assert!(seen.borrow().iter().all(|&y| y == 0));
}
