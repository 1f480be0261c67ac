use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::spatial::KdTree;

/// Object counts (train, val, test) of the material task.
pub const MATERIAL_SPLIT: (usize, usize, usize) = (60, 11, 11);
/// Object counts of the shape task.
pub const SHAPE_SPLIT: (usize, usize, usize) = (61, 11, 11);
pub const REID_K: usize = 15;
pub const REID_DRAWS_TRAIN: usize = 500;
pub const REID_DRAWS_EVAL: usize = 50;

/// Synthetic share of each training batch: (first epoch, last epoch exclusive, fraction).
pub const BLEND_SCHEDULE: [(usize, usize, f64); 9] = [
    (0, 100, 1.0),
    (100, 200, 0.9),
    (200, 300, 0.8),
    (300, 400, 0.6),
    (400, 500, 0.4),
    (500, 600, 0.2),
    (600, 700, 0.1),
    (700, 800, 0.05),
    (800, 1000, 0.0),
];

pub fn blend_fraction(epoch: usize) -> Result<f64> {
    BLEND_SCHEDULE
        .iter()
        .find(|(lo, hi, _)| (*lo..*hi).contains(&epoch))
        .map(|r| r.2)
        .ok_or_else(|| Error::invalid(format!("epoch {epoch} outside the 0..1000 blending schedule")))
}

/// Label of the nearest annotated point for every contact; ties go to the
/// lower annotated index.
pub fn assign_material_labels(contacts: &[Vec3], annotated: &PointCloud) -> Result<Vec<u8>> {
    let labels = annotated
        .labels
        .as_ref()
        .ok_or_else(|| Error::invalid("annotated cloud has no labels"))?;
    if annotated.is_empty() {
        return Err(Error::invalid("annotated cloud is empty"));
    }
    let tree = KdTree::new(&annotated.points);
    Ok(contacts
        .iter()
        .map(|c| labels[tree.nearest(c).expect("non-empty tree").0])
        .collect())
}

/// Pads every class up to the largest class count with uniformly drawn
/// duplicates. Originals keep their order at the front.
pub fn balance_by_duplication<T: Clone>(items: &[T], class_of: impl Fn(&T) -> usize, seed: u64) -> Result<Vec<T>> {
    if items.is_empty() {
        return Err(Error::invalid("cannot balance an empty set"));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        by_class.entry(class_of(it)).or_default().push(i);
    }
    let target = by_class.values().map(Vec::len).max().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = items.to_vec();
    for members in by_class.values() {
        for _ in members.len()..target {
            out.push(items[members[rng.random_range(0..members.len())]].clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let mut all: Vec<&String> = self.train.iter().chain(&self.val).chain(&self.test).collect();
        let n = all.len();
        all.sort();
        all.dedup();
        if all.len() != n {
            return Err(Error::invalid("split partitions overlap"));
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s: Self = serde_json::from_slice(&std::fs::read(path).map_err(|e| Error::io(path, e))?)?;
        s.validate()?;
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Object-disjoint split. With exactly `train + val + test` objects the
/// counts are used as given; otherwise validation and test get the same
/// proportions (at least one object each) and training takes the rest.
pub fn split_objects(ids: &[String], counts: (usize, usize, usize), seed: u64) -> Result<SplitSpec> {
    let n = ids.len();
    if n < 3 {
        return Err(Error::invalid(format!("need at least 3 objects to split, got {n}")));
    }
    let total = counts.0 + counts.1 + counts.2;
    let (n_val, n_test) = if n == total {
        (counts.1, counts.2)
    } else {
        let scale = |c: usize| ((n as f64 * c as f64 / total as f64).round() as usize).max(1);
        (scale(counts.1), scale(counts.2))
    };
    if n_val + n_test >= n {
        return Err(Error::invalid(format!("{n} objects leave none for training")));
    }
    let mut sorted = ids.to_vec();
    sorted.sort();
    let before = sorted.len();
    sorted.dedup();
    if sorted.len() != before {
        return Err(Error::invalid("duplicate object ids"));
    }
    sorted.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = sorted.split_off(n - n_test);
    let val = sorted.split_off(n - n_test - n_val);
    Ok(SplitSpec {
        train: sorted,
        val,
        test,
        seed,
    })
}

pub fn split_material(ids: &[String], seed: u64) -> Result<SplitSpec> {
    split_objects(ids, MATERIAL_SPLIT, seed)
}

/// Per-object partition of tap positions for re-identification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TapPartition {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n_taps` and cuts 60/20/20 in the shuffled order.
pub fn reid_partition(n_taps: usize, seed: u64) -> TapPartition {
    let mut idx: Vec<usize> = (0..n_taps).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (n_taps as f64 * 0.2).round() as usize;
    let n_val = (n_taps as f64 * 0.2).round() as usize;
    let test = idx.split_off(n_taps - n_test);
    let val = idx.split_off(n_taps - n_test - n_val);
    TapPartition { train: idx, val, test }
}

/// `draws` samples of `k` distinct entries of `pool`. Fails when the pool
/// holds fewer than `k` entries.
pub fn sample_reid(pool: &[usize], k: usize, draws: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if pool.len() < k {
        return Err(Error::invalid(format!("{} taps available, {k} needed", pool.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..draws)
        .map(|_| index::sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i]).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::nearest_brute;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("obj{i:03}")).collect()
    }

    #[test]
    fn blend_rows() {
        for (lo, hi, f) in BLEND_SCHEDULE {
            assert_eq!(blend_fraction(lo).unwrap(), f);
            assert_eq!(blend_fraction(hi - 1).unwrap(), f);
        }
        assert_eq!(blend_fraction(150).unwrap(), 0.9);
        assert_eq!(blend_fraction(850).unwrap(), 0.0);
        assert_eq!(blend_fraction(750).unwrap(), 0.05);
        assert!(blend_fraction(1000).is_err());
    }

    #[test]
    fn labels_from_nearest_annotation() {
        let ann = PointCloud::labeled(vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)], vec![3, 7]).unwrap();
        let got = assign_material_labels(&[Vec3::new(2.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)], &ann).unwrap();
        assert_eq!(got, vec![7, 3, 3]);
        assert!(assign_material_labels(&[], &PointCloud::new(vec![Vec3::zeros()]).unwrap()).is_err());
    }

    #[test]
    fn labels_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec3> = (0..500).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let labels: Vec<u8> = (0..500).map(|_| rng.random_range(0..9)).collect();
        let ann = PointCloud::labeled(pts.clone(), labels.clone()).unwrap();
        let qs: Vec<Vec3> = (0..200).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let got = assign_material_labels(&qs, &ann).unwrap();
        for (q, g) in qs.iter().zip(got) {
            assert_eq!(g, labels[nearest_brute(&pts, q).unwrap().0]);
        }
    }

    #[test]
    fn balancing() {
        let items = vec![('a', 0), ('a', 1), ('a', 2), ('b', 3)];
        let out = balance_by_duplication(&items, |x| x.0 as usize, 1).unwrap();
        assert_eq!(&out[..4], &items[..]);
        assert_eq!(out.iter().filter(|x| x.0 == 'b').count(), 3);
        assert_eq!(out, balance_by_duplication(&items, |x| x.0 as usize, 1).unwrap());
        let even = vec![1, 2];
        assert_eq!(balance_by_duplication(&even, |x| *x as usize, 0).unwrap(), even);
        assert!(balance_by_duplication::<u8>(&[], |x| *x as usize, 0).is_err());
    }

    #[test]
    fn paper_scale_split() {
        let s = split_material(&ids(82), 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (60, 11, 11));
        s.validate().unwrap();
        assert_eq!(s, split_material(&ids(82), 3).unwrap());
        assert_ne!(s, split_material(&ids(82), 4).unwrap());
        let sh = split_objects(&ids(83), SHAPE_SPLIT, 0).unwrap();
        assert_eq!((sh.train.len(), sh.val.len(), sh.test.len()), (61, 11, 11));
    }

    #[test]
    fn desk_scale_split() {
        let s = split_material(&ids(10), 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        let s = split_material(&ids(30), 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (22, 4, 4));
        assert!(split_material(&ids(2), 0).is_err());
        assert_eq!(split_material(&ids(3), 0).unwrap().train.len(), 1);
        assert!(split_material(&["a".to_string(), "a".to_string(), "b".to_string()], 0).is_err());
    }

    #[test]
    fn reid_sampling() {
        let p = reid_partition(100, 9);
        assert_eq!((p.train.len(), p.val.len(), p.test.len()), (60, 20, 20));
        let mut all: Vec<usize> = p.train.iter().chain(&p.val).chain(&p.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let draws = sample_reid(&p.test, REID_K, REID_DRAWS_EVAL, 2).unwrap();
        assert_eq!(draws.len(), 50);
        for d in &draws {
            let mut s = d.clone();
            s.sort_unstable();
            s.dedup();
            assert_eq!(s.len(), 15);
            assert!(d.iter().all(|i| p.test.contains(i)));
        }
        assert!(sample_reid(&p.test[..10], REID_K, 5, 0).is_err());
    }
}
