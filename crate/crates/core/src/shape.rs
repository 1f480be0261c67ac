//! Chamfer distances, mesh surface sampling and subsampling augmentation.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::{TriMesh, Vec3};
use crate::spatial::{dist2, KdTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum ChamferVariant {
    /// Mean Euclidean nearest-neighbour distance, summed over both directions.
    L1,
    /// Same with squared distances.
    L2,
}

impl ChamferVariant {
    #[inline]
    fn cost(self, d2: f64) -> f64 {
        match self {
            ChamferVariant::L1 => d2.sqrt(),
            ChamferVariant::L2 => d2,
        }
    }
}

/// For every point of `from`, the index of (and squared distance to) its
/// nearest point in `to`.
pub fn nearest_assignments(from: &[Vec3], to: &KdTree) -> Vec<(usize, f64)> {
    from.iter()
        .map(|p| to.nearest(p).expect("non-empty target"))
        .collect()
}

fn directional(from: &[Vec3], to: &KdTree, variant: ChamferVariant) -> f64 {
    let sum: f64 = from
        .iter()
        .map(|p| variant.cost(to.nearest(p).expect("non-empty target").1))
        .sum();
    sum / from.len() as f64
}

/// Symmetric Chamfer distance using k-d tree queries.
pub fn chamfer(a: &[Vec3], b: &[Vec3], variant: ChamferVariant) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("chamfer distance of an empty cloud"));
    }
    let ta = KdTree::new(a);
    let tb = KdTree::new(b);
    Ok(directional(a, &tb, variant) + directional(b, &ta, variant))
}

/// O(n·m) reference implementation of [`chamfer`].
pub fn chamfer_brute(a: &[Vec3], b: &[Vec3], variant: ChamferVariant) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("chamfer distance of an empty cloud"));
    }
    let dir = |from: &[Vec3], to: &[Vec3]| {
        let s: f64 = from
            .iter()
            .map(|p| variant.cost(to.iter().map(|q| dist2(p, q)).fold(f64::INFINITY, f64::min)))
            .sum();
        s / from.len() as f64
    };
    Ok(dir(a, b) + dir(b, a))
}

/// Chamfer-L1 between a prediction and ground truth, in the clouds' units (meters).
pub fn eval_chamfer_l1(pred: &PointCloud, truth: &PointCloud) -> Result<f64> {
    chamfer(&pred.points, &truth.points, ChamferVariant::L1)
}

/// Area-weighted uniform samples on the mesh surface.
pub fn sample_mesh_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<PointCloud> {
    let (points, _) = sample_mesh_surface_with_faces(mesh, n, seed)?;
    PointCloud::new(points)
}

/// Like [`sample_mesh_surface`], also returning the face each sample lies on.
pub fn sample_mesh_surface_with_faces(mesh: &TriMesh, n: usize, seed: u64) -> Result<(Vec<Vec3>, Vec<usize>)> {
    mesh.validate()?;
    if n == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut acc = 0.0;
    for f in 0..mesh.faces.len() {
        acc += mesh.face_area(f);
        cdf.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut faces = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.random::<f64>() * acc;
        let f = cdf.partition_point(|&c| c <= r).min(cdf.len() - 1);
        let [a, b, c] = mesh.triangle(f);
        let su = rng.random::<f64>().sqrt();
        let v: f64 = rng.random();
        points.push(a * (1.0 - su) + b * (su * (1.0 - v)) + c * (su * v));
        faces.push(f);
    }
    Ok((points, faces))
}

/// Random subsets keeping a uniformly drawn fraction in `[lo, hi]` of the points.
pub fn augment_subsample(cloud: &PointCloud, lo: f64, hi: f64, copies: usize, seed: u64) -> Result<Vec<PointCloud>> {
    if !(0.0 < lo && lo <= hi && hi <= 1.0) {
        return Err(Error::invalid(format!("subsample bounds must satisfy 0 < lo <= hi <= 1, got [{lo}, {hi}]")));
    }
    let n = cloud.len();
    if n < 10 {
        return Err(Error::invalid(format!("need at least 10 points to subsample, got {n}")));
    }
    let min_keep = (lo * n as f64).ceil() as usize;
    let max_keep = ((hi * n as f64).floor() as usize).max(min_keep);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..copies)
        .map(|_| {
            let frac = rng.random_range(lo..=hi);
            let keep = ((frac * n as f64).round() as usize).clamp(min_keep, max_keep);
            let mut idx = index::sample(&mut rng, n, keep).into_vec();
            idx.sort_unstable();
            PointCloud {
                points: idx.iter().map(|&i| cloud.points[i]).collect(),
                labels: cloud.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Primitive;
    use proptest::prelude::{prop_assert, proptest};

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect()
    }

    #[test]
    fn single_point_clouds() {
        let a = [Vec3::zeros()];
        let b = [Vec3::new(1.0, 0.0, 0.0)];
        assert_eq!(chamfer(&a, &b, ChamferVariant::L1).unwrap(), 2.0);
        assert_eq!(chamfer(&a, &b, ChamferVariant::L2).unwrap(), 2.0);
        assert_eq!(chamfer(&a, &a, ChamferVariant::L1).unwrap(), 0.0);
    }

    #[test]
    fn empty_clouds_error() {
        assert!(chamfer(&[], &[Vec3::zeros()], ChamferVariant::L1).is_err());
        assert!(chamfer_brute(&[Vec3::zeros()], &[], ChamferVariant::L2).is_err());
    }

    #[test]
    fn accelerated_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random_cloud(&mut rng, 30);
            let b = random_cloud(&mut rng, 40);
            for v in [ChamferVariant::L1, ChamferVariant::L2] {
                let fast = chamfer(&a, &b, v).unwrap();
                let slow = chamfer_brute(&a, &b, v).unwrap();
                assert!((fast - slow).abs() <= 1e-12, "{fast} vs {slow}");
            }
        }
    }

    #[test]
    fn small_translation_doubles_offset() {
        // lattice spacing 1, shift 0.1: every point's neighbour is its own translate
        let a: Vec<Vec3> = (0..27)
            .map(|i| Vec3::new((i % 3) as f64, ((i / 3) % 3) as f64, (i / 9) as f64))
            .collect();
        let d = 0.1;
        let b: Vec<Vec3> = a.iter().map(|p| p + Vec3::new(d, 0.0, 0.0)).collect();
        let pa = PointCloud::new(a.clone()).unwrap();
        let pb = PointCloud::new(b.clone()).unwrap();
        let cd = eval_chamfer_l1(&pa, &pb).unwrap();
        assert!((cd - 2.0 * d).abs() < 1e-12);
        assert!((cd - chamfer_brute(&a, &b, ChamferVariant::L1).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn cube_sampling_is_area_uniform() {
        let cube = Primitive::Box {
            size: Vec3::new(1.0, 1.0, 1.0),
        }
        .mesh();
        let n = 5000;
        let (pts, faces) = sample_mesh_surface_with_faces(&cube, n, 42).unwrap();
        let mut per_side = [0usize; 6];
        for f in faces {
            per_side[f / 2] += 1;
        }
        let p = 1.0 / 6.0;
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in per_side {
            assert!((c as f64 - mean).abs() <= 3.0 * sd, "{per_side:?}");
        }
        for p in pts.iter().take(200) {
            assert!(cube.distance_to_surface(p) < 1e-12);
        }
    }

    #[test]
    fn sampling_single_point_and_determinism() {
        let cube = Primitive::Box {
            size: Vec3::new(0.2, 0.2, 0.2),
        }
        .mesh();
        let one = sample_mesh_surface(&cube, 1, 9).unwrap();
        assert_eq!(one.len(), 1);
        assert!(cube.distance_to_surface(&one.points[0]) < 1e-12);
        assert_eq!(
            sample_mesh_surface(&cube, 100, 5).unwrap(),
            sample_mesh_surface(&cube, 100, 5).unwrap()
        );
        let flat = TriMesh::new(vec![Vec3::zeros(); 3], vec![[0, 1, 2]]).unwrap();
        assert!(sample_mesh_surface(&flat, 10, 0).is_err());
    }

    #[test]
    fn subsample_bounds_and_membership() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cloud = PointCloud::new(random_cloud(&mut rng, 100)).unwrap();
        let copies = augment_subsample(&cloud, 0.8, 0.9, 1500, 4).unwrap();
        assert_eq!(copies.len(), 1500);
        for c in &copies {
            assert!((80..=90).contains(&c.len()));
            assert!(c.points.iter().all(|p| cloud.points.contains(p)));
        }
        assert!(augment_subsample(&cloud, 0.9, 0.8, 1, 0).is_err());
        let tiny = PointCloud::new(vec![Vec3::zeros(); 5]).unwrap();
        assert!(augment_subsample(&tiny, 0.8, 0.9, 1, 0).is_err());
    }

    proptest! {
        #[test]
        fn chamfer_symmetric_nonnegative_and_rigid_invariant(
            seed in 0u64..1000, n in 1usize..60, m in 1usize..60, angle in -3.0f64..3.0
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_cloud(&mut rng, n);
            let b = random_cloud(&mut rng, m);
            let ab = chamfer(&a, &b, ChamferVariant::L1).unwrap();
            let ba = chamfer(&b, &a, ChamferVariant::L1).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-12);
            let rot = nalgebra::Rotation3::from_euler_angles(angle, 0.3, -angle / 2.0);
            let t = Vec3::new(0.5, -2.0, 1.0);
            let ta: Vec<Vec3> = a.iter().map(|p| rot * p + t).collect();
            let tb: Vec<Vec3> = b.iter().map(|p| rot * p + t).collect();
            prop_assert!((chamfer(&ta, &tb, ChamferVariant::L1).unwrap() - ab).abs() < 1e-9);
        }
    }
}
