use std::f64::consts::TAU;

use super::{TriMesh, Vec3};

/// Closed analytic solids resting on the base plane `z = 0`, centered on the
/// vertical axis through the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Box { size: Vec3 },
    Cylinder { radius: f64, height: f64, segments: usize },
    Cone { radius: f64, height: f64, segments: usize },
    /// Square pyramid with base side `side`.
    Pyramid { side: f64, height: f64 },
    /// Vertical prism over an equilateral triangle of circumradius `radius`.
    Prism { radius: f64, height: f64 },
    Sphere { radius: f64, rings: usize, segments: usize },
}

impl Primitive {
    pub fn category(&self) -> &'static str {
        match self {
            Primitive::Box { .. } => "cube",
            Primitive::Cylinder { .. } => "cylinder",
            Primitive::Cone { .. } => "cone",
            Primitive::Pyramid { .. } => "quadrangular_pyramid",
            Primitive::Prism { .. } => "prism",
            Primitive::Sphere { .. } => "sphere",
        }
    }

    pub fn height(&self) -> f64 {
        match *self {
            Primitive::Box { size } => size.z,
            Primitive::Cylinder { height, .. }
            | Primitive::Cone { height, .. }
            | Primitive::Pyramid { height, .. }
            | Primitive::Prism { height, .. } => height,
            Primitive::Sphere { radius, .. } => 2.0 * radius,
        }
    }

    pub fn mesh(&self) -> TriMesh {
        match *self {
            Primitive::Box { size } => box_mesh(size),
            Primitive::Cylinder {
                radius,
                height,
                segments,
            } => frustum(radius, radius, height, segments.max(3)),
            Primitive::Cone {
                radius,
                height,
                segments,
            } => frustum(radius, 0.0, height, segments.max(3)),
            Primitive::Pyramid { side, height } => {
                // four-sided cone rotated so the faces are axis aligned
                let mut m = frustum(side / 2.0 * std::f64::consts::SQRT_2, 0.0, height, 4);
                let rot = nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), TAU / 8.0);
                m.vertices.iter_mut().for_each(|v| *v = rot * *v);
                m
            }
            Primitive::Prism { radius, height } => frustum(radius, radius, height, 3),
            Primitive::Sphere {
                radius,
                rings,
                segments,
            } => sphere(radius, rings.max(2), segments.max(3)),
        }
    }
}

fn box_mesh(size: Vec3) -> TriMesh {
    let (hx, hy, h) = (size.x / 2.0, size.y / 2.0, size.z);
    let vertices = vec![
        Vec3::new(-hx, -hy, 0.0),
        Vec3::new(hx, -hy, 0.0),
        Vec3::new(hx, hy, 0.0),
        Vec3::new(-hx, hy, 0.0),
        Vec3::new(-hx, -hy, h),
        Vec3::new(hx, -hy, h),
        Vec3::new(hx, hy, h),
        Vec3::new(-hx, hy, h),
    ];
    let quads = [
        [0, 3, 2, 1], // bottom
        [4, 5, 6, 7], // top
        [0, 1, 5, 4], // -y
        [1, 2, 6, 5], // +x
        [2, 3, 7, 6], // +y
        [3, 0, 4, 7], // -x
    ];
    let faces = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    TriMesh { vertices, faces }
}

/// Capped frustum; `top_radius == 0` gives a cone with a single apex vertex.
fn frustum(bottom_radius: f64, top_radius: f64, height: f64, segments: usize) -> TriMesh {
    let ring = |r: f64, z: f64| {
        (0..segments).map(move |k| {
            let a = TAU * k as f64 / segments as f64;
            Vec3::new(r * a.cos(), r * a.sin(), z)
        })
    };
    let mut vertices: Vec<Vec3> = ring(bottom_radius, 0.0).collect();
    let bottom_center = vertices.len();
    vertices.push(Vec3::new(0.0, 0.0, 0.0));
    let mut faces = Vec::new();
    for k in 0..segments {
        let next = (k + 1) % segments;
        faces.push([bottom_center, next, k]);
    }
    if top_radius > 0.0 {
        let top0 = vertices.len();
        vertices.extend(ring(top_radius, height));
        let top_center = vertices.len();
        vertices.push(Vec3::new(0.0, 0.0, height));
        for k in 0..segments {
            let next = (k + 1) % segments;
            faces.push([k, next, top0 + next]);
            faces.push([k, top0 + next, top0 + k]);
            faces.push([top_center, top0 + k, top0 + next]);
        }
    } else {
        let apex = vertices.len();
        vertices.push(Vec3::new(0.0, 0.0, height));
        for k in 0..segments {
            faces.push([k, (k + 1) % segments, apex]);
        }
    }
    TriMesh { vertices, faces }
}

fn sphere(radius: f64, rings: usize, segments: usize) -> TriMesh {
    let center = Vec3::new(0.0, 0.0, radius);
    let mut vertices = vec![center - Vec3::new(0.0, 0.0, radius)];
    for i in 1..rings {
        let phi = std::f64::consts::PI * i as f64 / rings as f64;
        for k in 0..segments {
            let a = TAU * k as f64 / segments as f64;
            vertices.push(
                center
                    + radius * Vec3::new(phi.sin() * a.cos(), phi.sin() * a.sin(), -phi.cos()),
            );
        }
    }
    let top = vertices.len();
    vertices.push(center + Vec3::new(0.0, 0.0, radius));
    let at = |ring: usize, k: usize| 1 + ring * segments + k % segments;
    let mut faces = Vec::new();
    for k in 0..segments {
        faces.push([0, at(0, k + 1), at(0, k)]);
    }
    for r in 0..rings - 2 {
        for k in 0..segments {
            faces.push([at(r, k), at(r, k + 1), at(r + 1, k + 1)]);
            faces.push([at(r, k), at(r + 1, k + 1), at(r + 1, k)]);
        }
    }
    for k in 0..segments {
        faces.push([at(rings - 2, k), at(rings - 2, k + 1), top]);
    }
    TriMesh { vertices, faces }
}
