use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::Vec3;
use crate::shape::{chamfer, ChamferVariant};

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Label of the training item with the lowest mean squared difference;
/// ties go to the lower training index.
pub fn nn_baseline_material(test: &[Vec<f64>], train: &[Vec<f64>], labels: &[usize], exec: Exec) -> Result<Vec<usize>> {
    if train.is_empty() {
        return Err(Error::invalid("nearest-neighbour baseline needs training items"));
    }
    if train.len() != labels.len() {
        return Err(Error::invalid("one label per training item required"));
    }
    let dim = train[0].len();
    if let Some(v) = train.iter().chain(test).find(|v| v.len() != dim) {
        return Err(Error::invalid(format!("item of length {} among items of length {dim}", v.len())));
    }
    Ok(exec.map(test, |q| {
        let mut best = (0, f64::INFINITY);
        for (i, t) in train.iter().enumerate() {
            let d = mse(q, t);
            if d < best.1 {
                best = (i, d);
            }
        }
        labels[best.0]
    }))
}

/// Index of the training object whose tap cloud is closest (Chamfer-L1) to
/// `test_taps`, and that object's ground-truth cloud.
pub fn nn_baseline_shape<'a>(
    test_taps: &[Vec3],
    train_taps: &[Vec<Vec3>],
    train_gt: &'a [PointCloud],
) -> Result<(usize, &'a PointCloud)> {
    if train_taps.is_empty() || train_taps.len() != train_gt.len() {
        return Err(Error::invalid("nearest-neighbour shape baseline needs paired, non-empty training data"));
    }
    let mut best = (0, f64::INFINITY);
    for (i, t) in train_taps.iter().enumerate() {
        let d = chamfer(test_taps, t, ChamferVariant::L1)?;
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok((best.0, &train_gt[best.0]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomBaseline {
    pub trials: usize,
    pub mean: f64,
    pub sd: f64,
    /// Normal-approximation 95% interval of the mean.
    pub ci95: (f64, f64),
}

/// Scores `metric` on `trials` sets of uniform random predictions.
pub fn random_baseline(
    n_classes: usize,
    truth: &[usize],
    seed: u64,
    trials: usize,
    metric: impl Fn(&[usize], &[usize]) -> Result<f64>,
) -> Result<RandomBaseline> {
    if trials < 100 {
        return Err(Error::invalid(format!("random baseline needs at least 100 trials, got {trials}")));
    }
    if n_classes == 0 {
        return Err(Error::invalid("no classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(trials);
    for _ in 0..trials {
        let pred: Vec<usize> = truth.iter().map(|_| rng.random_range(0..n_classes)).collect();
        values.push(metric(&pred, truth)?);
    }
    let n = trials as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let half = 1.96 * sd / n.sqrt();
    Ok(RandomBaseline {
        trials,
        mean,
        sd,
        ci95: (mean - half, mean + half),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{accuracy, macro_f1};
    use crate::shape::chamfer_brute;

    fn rand_vecs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| rng.random()).collect()).collect()
    }

    #[test]
    fn material_nn_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let train = rand_vecs(&mut rng, 20, 16);
        let labels: Vec<usize> = (0..20).map(|i| i % 9).collect();
        let test = rand_vecs(&mut rng, 20, 16);
        let got = nn_baseline_material(&test, &train, &labels, Exec::Parallel).unwrap();
        for (q, g) in test.iter().zip(&got) {
            let ds: Vec<f64> = train.iter().map(|t| mse(q, t)).collect();
            let min = ds.iter().cloned().fold(f64::INFINITY, f64::min);
            assert_eq!(*g, labels[ds.iter().position(|&d| d == min).unwrap()]);
        }
        assert_eq!(nn_baseline_material(&train[3..4], &train, &labels, Exec::Sequential).unwrap(), vec![labels[3]]);
    }

    #[test]
    fn material_nn_ties_and_errors() {
        let train = vec![vec![1.0], vec![1.0]];
        assert_eq!(nn_baseline_material(&[vec![1.0]], &train, &[4, 5], Exec::Sequential).unwrap(), vec![4]);
        assert!(nn_baseline_material(&[vec![1.0, 2.0]], &train, &[4, 5], Exec::Sequential).is_err());
        assert!(nn_baseline_material(&[vec![1.0]], &[], &[], Exec::Sequential).is_err());
    }

    #[test]
    fn shape_nn_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cloud = |rng: &mut ChaCha8Rng, n| (0..n).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect::<Vec<_>>();
        let train: Vec<Vec<Vec3>> = (0..10).map(|_| cloud(&mut rng, 25)).collect();
        let gt: Vec<PointCloud> = (0..10).map(|_| PointCloud::new(cloud(&mut rng, 30)).unwrap()).collect();
        for _ in 0..5 {
            let q = cloud(&mut rng, 25);
            let (i, g) = nn_baseline_shape(&q, &train, &gt).unwrap();
            let ds: Vec<f64> = train.iter().map(|t| chamfer_brute(&q, t, ChamferVariant::L1).unwrap()).collect();
            let min = ds.iter().cloned().fold(f64::INFINITY, f64::min);
            assert_eq!(i, ds.iter().position(|&d| d == min).unwrap());
            assert_eq!(g, &gt[i]);
        }
        let (i, _) = nn_baseline_shape(&train[7], &train, &gt).unwrap();
        assert_eq!(i, 7);
        let dup = vec![train[0].clone(), train[0].clone()];
        assert_eq!(nn_baseline_shape(&train[0], &dup, &gt[..2]).unwrap().0, 0);
        assert!(nn_baseline_shape(&train[0], &[], &[]).is_err());
    }

    #[test]
    fn random_accuracy_near_chance() {
        let truth: Vec<usize> = (0..82 * 50).map(|i| i % 82).collect();
        let r = random_baseline(82, &truth, 0, 200, accuracy).unwrap();
        let sigma = (1.0 / 82.0 * (1.0 - 1.0 / 82.0) / truth.len() as f64).sqrt() / (200f64).sqrt();
        assert!((r.mean - 1.0 / 82.0).abs() < 3.0 * sigma, "{}", r.mean);
        assert_eq!(r, random_baseline(82, &truth, 0, 200, accuracy).unwrap());
        assert!(random_baseline(82, &truth, 0, 99, accuracy).is_err());
    }

    #[test]
    fn random_macro_f1_near_one_ninth() {
        let truth: Vec<usize> = (0..900).map(|i| i % 9).collect();
        let r = random_baseline(9, &truth, 1, 100, |p, t| macro_f1(p, t, 9)).unwrap();
        assert!((r.mean - 1.0 / 9.0).abs() < 0.01, "{}", r.mean);
        assert!(r.ci95.0 < r.mean && r.mean < r.ci95.1);
    }
}
