//! Triangle meshes, analytic primitives and the ray/distance queries used by
//! the tap simulator and the surface-distance checks.

mod io;
mod primitives;

pub use io::{read_mesh, read_obj, read_ply, write_obj};
pub use primitives::Primitive;

use crate::error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;

const RAY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

/// Result of a ray cast: distance along the ray, hit point and face index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub point: Vec3,
    pub face: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    /// Slab test for the segment `origin + t*dir`, `t` in `[0, travel]`.
    pub fn hits_segment(&self, origin: &Vec3, dir: &Vec3, travel: f64) -> bool {
        let (mut lo, mut hi) = (0.0f64, travel);
        for a in 0..3 {
            if dir[a].abs() < 1e-300 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return false;
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let mut t0 = (self.min[a] - origin[a]) * inv;
            let mut t1 = (self.max[a] - origin[a]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            lo = lo.max(t0);
            hi = hi.min(t1);
            if lo > hi {
                return false;
            }
        }
        true
    }
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(Error::invalid(format!("face {f:?} references a missing vertex")));
        }
        Ok(Self { vertices, faces })
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.triangle(face);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn face_centroid(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.triangle(face);
        (a + b + c) / 3.0
    }

    pub fn bounds(&self) -> Aabb {
        let mut min = Vec3::repeat(f64::INFINITY);
        let mut max = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            min = min.inf(v);
            max = max.sup(v);
        }
        Aabb { min, max }
    }

    /// Rejects meshes that cannot be ray cast or sampled.
    pub fn validate(&self) -> Result<()> {
        if self.faces.is_empty() {
            return Err(Error::invalid("mesh has no faces"));
        }
        if self.vertices.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
            return Err(Error::invalid("mesh has non-finite vertices"));
        }
        if self.total_area() <= 0.0 {
            return Err(Error::invalid("mesh has zero surface area"));
        }
        Ok(())
    }

    pub fn translated(&self, offset: Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| v + offset).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Nearest intersection of the segment `origin + t*dir`, `0 < t <= travel`.
    pub fn ray_cast(&self, origin: &Vec3, dir: &Vec3, travel: f64) -> Option<RayHit> {
        let mut best: Option<RayHit> = None;
        for face in 0..self.faces.len() {
            let tri = self.triangle(face);
            if let Some(t) = ray_triangle(origin, dir, &tri) {
                if t <= travel && best.is_none_or(|b| t < b.t) {
                    best = Some(RayHit {
                        t,
                        point: origin + dir * t,
                        face,
                    });
                }
            }
        }
        best
    }

    /// Unsigned distance from `p` to the closest point on the surface.
    pub fn distance_to_surface(&self, p: &Vec3) -> f64 {
        self.closest_face(p).map_or(f64::INFINITY, |(_, d)| d)
    }

    /// Face nearest to `p` and its distance; ties go to the lower index.
    pub fn closest_face(&self, p: &Vec3) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for f in 0..self.faces.len() {
            let [a, b, c] = self.triangle(f);
            let d = (closest_point_on_triangle(p, &a, &b, &c) - p).norm();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((f, d));
            }
        }
        best
    }
}

/// Möller–Trumbore intersection; returns the ray parameter of a hit with `t > 0`.
pub fn ray_triangle(origin: &Vec3, dir: &Vec3, tri: &[Vec3; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < RAY_EPS * e1.norm() * e2.norm() {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > RAY_EPS).then_some(t)
}

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cube() -> TriMesh {
        Primitive::Box {
            size: Vec3::new(1.0, 1.0, 1.0),
        }
        .mesh()
    }

    #[test]
    fn ray_hits_near_face_of_cube() {
        // cube spans x in [-0.5, 0.5], z in [0, 1]
        let m = unit_cube();
        let hit = m
            .ray_cast(&Vec3::new(2.0, 0.0, 0.5), &Vec3::new(-1.0, 0.0, 0.0), 10.0)
            .unwrap();
        assert!((hit.point.x - 0.5).abs() < 1e-12);
        assert!((hit.t - 1.5).abs() < 1e-12);
    }

    #[test]
    fn ray_missing_and_short_travel() {
        let m = unit_cube();
        let dir = Vec3::new(-1.0, 0.0, 0.0);
        assert!(m.ray_cast(&Vec3::new(2.0, 3.0, 0.5), &dir, 10.0).is_none());
        assert!(m.ray_cast(&Vec3::new(2.0, 0.0, 0.5), &dir, 1.0).is_none());
    }

    #[test]
    fn ray_from_inside_matches_brute_force() {
        let m = unit_cube();
        let origin = Vec3::new(0.1, -0.2, 0.4);
        for dir in [
            Vec3::new(1.0, 0.3, 0.2).normalize(),
            Vec3::new(-0.2, -1.0, 0.5).normalize(),
            Vec3::new(0.0, 0.0, -1.0),
        ] {
            let hit = m.ray_cast(&origin, &dir, 10.0).unwrap();
            let brute = (0..m.faces.len())
                .filter_map(|f| ray_triangle(&origin, &dir, &m.triangle(f)))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(hit.t, brute);
            assert!(m.distance_to_surface(&hit.point) < 1e-12);
        }
    }

    #[test]
    fn distance_to_cube_surface() {
        let m = unit_cube();
        assert!((m.distance_to_surface(&Vec3::new(0.0, 0.0, 0.5)) - 0.5).abs() < 1e-12);
        assert!((m.distance_to_surface(&Vec3::new(1.5, 0.0, 0.5)) - 1.0).abs() < 1e-12);
        let corner = Vec3::new(1.5, 1.5, 2.0);
        let d = (corner - Vec3::new(0.5, 0.5, 1.0)).norm();
        assert!((m.distance_to_surface(&corner) - d).abs() < 1e-12);
    }

    #[test]
    fn degenerate_meshes_rejected() {
        let flat = TriMesh::new(vec![Vec3::zeros(); 3], vec![[0, 1, 2]]).unwrap();
        assert!(flat.validate().is_err());
        assert!(TriMesh::new(vec![], vec![]).unwrap().validate().is_err());
        assert!(TriMesh::new(vec![Vec3::zeros()], vec![[0, 1, 2]]).is_err());
    }

    #[test]
    fn aabb_segment_test() {
        let b = unit_cube().bounds();
        assert!(b.hits_segment(&Vec3::new(2.0, 0.0, 0.5), &Vec3::new(-1.0, 0.0, 0.0), 2.0));
        assert!(!b.hits_segment(&Vec3::new(2.0, 0.0, 0.5), &Vec3::new(-1.0, 0.0, 0.0), 1.0));
        assert!(!b.hits_segment(&Vec3::new(2.0, 0.0, 1.5), &Vec3::new(-1.0, 0.0, 0.0), 9.0));
    }
}
