use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Separability {
    pub pca2d: Vec<[f64; 2]>,
    /// Mean silhouette in the original feature space.
    pub silhouette: f64,
    /// Set when every row is identical; the silhouette is then reported as 0.
    pub degenerate: bool,
}

/// Two-component PCA projection and silhouette score of labelled features.
pub fn separability(features: &[Vec<f64>], labels: &[usize]) -> Result<Separability> {
    if features.len() != labels.len() {
        return Err(Error::invalid("features and labels differ in length"));
    }
    let d = features.first().map_or(0, |r| r.len());
    if d == 0 || features.iter().any(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("features must be non-empty, rectangular and finite"));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::invalid("separability needs at least two classes"));
    }
    if classes.iter().any(|c| labels.iter().filter(|l| *l == c).count() < 2) {
        return Err(Error::invalid("every class needs at least two points"));
    }

    let pca2d = pca2(features, d);
    let degenerate = features.iter().all(|r| r == &features[0]);
    if degenerate {
        log::warn!("separability: all feature rows are identical");
    }
    let silhouette = if degenerate { 0.0 } else { silhouette(features, labels, &classes) };
    Ok(Separability {
        pca2d,
        silhouette,
        degenerate,
    })
}

fn pca2(features: &[Vec<f64>], d: usize) -> Vec<[f64; 2]> {
    let n = features.len();
    let mean: Vec<f64> = (0..d)
        .map(|c| features.iter().map(|r| r[c]).sum::<f64>() / n as f64)
        .collect();
    let x = DMatrix::from_fn(n, d, |i, j| features[i][j] - mean[j]);
    let cov = x.transpose() * &x / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axis = |k: usize| -> Vec<f64> {
        let Some(&idx) = order.get(k) else {
            return vec![0.0; d];
        };
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        // sign convention: largest-magnitude loading is positive
        let big = (0..d).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap();
        if v[big] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    let (a0, a1) = (axis(0), axis(1));
    (0..n)
        .map(|i| {
            let row = x.row(i);
            [
                row.iter().zip(&a0).map(|(p, q)| p * q).sum(),
                row.iter().zip(&a1).map(|(p, q)| p * q).sum(),
            ]
        })
        .collect()
}

fn silhouette(features: &[Vec<f64>], labels: &[usize], classes: &[usize]) -> f64 {
    let n = features.len();
    let dist = |i: usize, j: usize| -> f64 {
        features[i]
            .iter()
            .zip(&features[j])
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut total = 0.0;
    for i in 0..n {
        let mut sum = vec![0.0; classes.len()];
        let mut cnt = vec![0usize; classes.len()];
        for j in 0..n {
            if j != i {
                let c = classes.binary_search(&labels[j]).unwrap();
                sum[c] += dist(i, j);
                cnt[c] += 1;
            }
        }
        let own = classes.binary_search(&labels[i]).unwrap();
        let a = sum[own] / cnt[own] as f64;
        let b = (0..classes.len())
            .filter(|&c| c != own)
            .map(|c| sum[c] / cnt[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        total += if m > 0.0 { (b - a) / m } else { 0.0 };
    }
    total / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};

    #[test]
    fn perfect_two_class() {
        let f = vec![vec![0.0], vec![0.0], vec![1.0], vec![1.0]];
        let s = separability(&f, &[0, 0, 1, 1]).unwrap();
        assert_eq!(s.silhouette, 1.0);
        assert!(!s.degenerate);
        assert_eq!(s.pca2d.len(), 4);
        assert_eq!(s.pca2d[0][1], 0.0);
    }

    #[test]
    fn one_class_rejected() {
        assert!(separability(&[vec![0.0], vec![1.0]], &[0, 0]).is_err());
    }

    #[test]
    fn identical_rows_flagged() {
        let s = separability(&vec![vec![0.3, 0.3]; 4], &[0, 0, 1, 1]).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.silhouette, 0.0);
    }

    #[test]
    fn shuffled_labels_score_near_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2 {
            for _ in 0..40 {
                feats.push((0..4).map(|_| c as f64 * 3.0 + rng.random_range(-0.5..0.5)).collect::<Vec<_>>());
                labels.push(c);
            }
        }
        assert!(separability(&feats, &labels).unwrap().silhouette > 0.7);
        for _ in 0..30 {
            labels.shuffle(&mut rng);
            let s = separability(&feats, &labels).unwrap().silhouette;
            assert!(s.abs() < 0.2, "{s}");
        }
    }

    #[test]
    fn pca_variance_ordering() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let f: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let t: f64 = rng.random_range(-5.0..5.0);
                let u: f64 = rng.random_range(-1.0..1.0);
                vec![t + 0.1 * u, t - 0.1 * u, u]
            })
            .collect();
        let labels: Vec<usize> = (0..200).map(|i| i % 2).collect();
        let s = separability(&f, &labels).unwrap();
        let var = |k: usize| s.pca2d.iter().map(|p| p[k] * p[k]).sum::<f64>();
        assert!(var(0) > var(1));
        // first component follows the shared direction (1, 1, 0)/sqrt(2)
        let p0 = s.pca2d[0][0];
        let want = (f[0][0] + f[0][1] - f.iter().map(|r| r[0] + r[1]).sum::<f64>() / 200.0) / 2f64.sqrt();
        assert!((p0.abs() - want.abs()).abs() < 0.05);
    }
}
