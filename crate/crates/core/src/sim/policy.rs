use nalgebra::{Matrix3, Rotation3};
use serde::{Deserialize, Serialize};

use super::{probe_contact, DimensionEstimate, PolicyConfig, SimObject, TapRecord};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::kinematics::{ArmTransform, Finger, HandGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Initial side taps at fixed heights.
    Rough,
    Top,
    Left,
    Back,
}

impl Side {
    /// Tap direction and the hand's up vector.
    fn frame(self) -> (Vec3, Vec3) {
        match self {
            Side::Rough | Side::Left => (Vec3::x(), Vec3::z()),
            Side::Back => (-Vec3::y(), Vec3::z()),
            Side::Top => (-Vec3::z(), Vec3::x()),
        }
    }
}

/// A tap target: the joint of `finger` travels along the side's tap
/// direction through `anchor` (the anchor's component along that direction
/// is ignored).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannedTap {
    pub side: Side,
    pub finger: u8,
    pub anchor: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub records: Vec<TapRecord>,
    pub dimensions: DimensionEstimate,
    pub top_enabled: bool,
    pub two_scale: bool,
    pub plan: Vec<PlannedTap>,
}

impl PolicyRun {
    pub fn valid(&self) -> impl Iterator<Item = &TapRecord> {
        self.records.iter().filter(|r| r.v)
    }
}

const CM: f64 = 0.01;
/// Joint angle at which the link points along the tap direction.
const FORWARD_DEG: f64 = 94.5;

/// Hand placement: world = rot · hand + t (hand coordinates in metres).
struct Pose {
    arm: ArmTransform,
}

impl Pose {
    /// Places `finger`'s joint at world point `joint`.
    fn new(g: &HandGeometry, finger: Finger, d: Vec3, u: Vec3, joint: Vec3) -> Self {
        let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[u, d.cross(&u), d]));
        let t = joint - rot * (g.joint_origin(finger) * CM);
        Self {
            arm: ArmTransform::from_parts(rot, t),
        }
    }

    fn tip(&self, g: &HandGeometry, finger: Finger, theta: f64) -> Vec3 {
        self.arm.apply(&(g.fingertip(finger, theta) * CM))
    }
}

struct Contact {
    point: Vec3,
}

/// Sweeps the finger through its arc in small segments, returning the first
/// contact. The contact angle is interpolated along the hit segment and the
/// point recomputed through forward kinematics.
fn sweep(obj: &SimObject, g: &HandGeometry, cfg: &PolicyConfig, finger: Finger, pose: &Pose) -> Option<Contact> {
    let n = ((cfg.sweep_end_deg - cfg.sweep_start_deg) / cfg.sweep_step_deg).ceil() as usize;
    let angle = |k: usize| (cfg.sweep_start_deg + k as f64 * cfg.sweep_step_deg).min(cfg.sweep_end_deg);
    let mut prev = pose.tip(g, finger, angle(0));
    for k in 1..=n {
        let next = pose.tip(g, finger, angle(k));
        let seg = next - prev;
        let len = seg.norm();
        if len > 0.0 {
            let dir = seg / len;
            if let Ok(Some(hit)) = probe_contact(obj, &prev, &dir, len) {
                let theta = angle(k - 1) + (hit.t / len) * (angle(k) - angle(k - 1));
                return Some(Contact {
                    point: pose.tip(g, finger, theta),
                });
            }
        }
        prev = next;
    }
    None
}

/// Advances the hand toward the object in `approach_step` increments,
/// sweeping the finger at each stop.
fn tap(obj: &SimObject, g: &HandGeometry, cfg: &PolicyConfig, planned: &PlannedTap) -> (Option<Vec3>, Vec3) {
    let (d, u) = planned.side.frame();
    let finger = Finger::new(planned.finger).expect("planned finger is valid");
    let anchor = Vec3::from(planned.anchor);
    let base = anchor - d * anchor.dot(&d);
    let b = obj.mesh.bounds();
    let corners = [b.min, b.max];
    let proj: Vec<f64> = (0..8)
        .map(|c| Vec3::new(corners[c & 1].x, corners[(c >> 1) & 1].y, corners[(c >> 2) & 1].z).dot(&d))
        .collect();
    let (near, far) = proj.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let reach = g.link_length * CM;
    // first stop on a fixed grid from the workspace edge, just out of reach
    let start = -(cfg.workspace + cfg.max_height);
    let k0 = (((near - reach - start) / cfg.approach_step).floor() - 1.0).max(0.0) as usize;
    let mut k = k0;
    let mut last = base + d * start;
    loop {
        let a = start + k as f64 * cfg.approach_step;
        if a > far {
            break;
        }
        let pose = Pose::new(g, finger, d, u, base + d * a);
        if let Some(c) = sweep(obj, g, cfg, finger, &pose) {
            return (Some(c.point), c.point);
        }
        last = pose.tip(g, finger, FORWARD_DEG);
        k += 1;
    }
    (None, last)
}

/// Drops from `max_height` in `descend_step` decrements, pushing the third
/// fingertip across the centerline at each height until it touches.
pub fn estimate_dimensions(obj: &SimObject, cfg: &PolicyConfig, g: &HandGeometry) -> Result<DimensionEstimate> {
    cfg.validate()?;
    g.validate()?;
    let finger = Finger::new(3)?;
    let (d, u) = Side::Left.frame();
    let reach = g.link_length * CM;
    let mut k = 0usize;
    loop {
        let z = cfg.max_height - k as f64 * cfg.descend_step;
        if z <= 0.0 {
            return Err(Error::ObjectNotFound);
        }
        let start = Vec3::new(-cfg.workspace, 0.0, z);
        if let Some(hit) = probe_contact(obj, &start, &d, 2.0 * cfg.workspace)? {
            // contact position through the kinematic chain at the contact pose
            let pose = Pose::new(g, finger, d, u, hit.point - d * reach);
            let p = pose.tip(g, finger, FORWARD_DEG);
            return Ok(DimensionEstimate {
                height: p.z.clamp(0.0, cfg.max_height),
                radius: p.x.abs(),
            });
        }
        k += 1;
    }
}

fn centered_grid(half: f64, pitch: f64) -> Vec<f64> {
    let n = ((2.0 * half) / pitch + 1e-9).floor() as usize + 1;
    let off = (n - 1) as f64 * pitch / 2.0;
    (0..n).map(|j| -off + j as f64 * pitch).collect()
}

fn plan(dims: &DimensionEstimate, cfg: &PolicyConfig, top: bool, two_scale: bool) -> Vec<PlannedTap> {
    let (pitch, vstep) = if two_scale {
        (cfg.large_lateral_pitch, cfg.large_vertical_step)
    } else {
        (cfg.lateral_pitch, cfg.vertical_step)
    };
    let mut out = Vec::new();
    let mut finger = 0usize;
    let mut push = |side, anchor: Vec3, out: &mut Vec<PlannedTap>| {
        out.push(PlannedTap {
            side,
            finger: (finger % 4 + 1) as u8,
            anchor: anchor.into(),
        });
        finger += 1;
    };
    let rough = if two_scale {
        [cfg.rough_heights[1], cfg.rough_heights[1] + vstep]
    } else {
        cfg.rough_heights
    };
    for z in rough {
        push(Side::Rough, Vec3::new(0.0, 0.0, z), &mut out);
    }
    if top {
        let grid = centered_grid(dims.radius, pitch);
        let r2 = dims.radius * dims.radius + 1e-12;
        let inside: Vec<(f64, f64)> = grid
            .iter()
            .flat_map(|&x| grid.iter().map(move |&y| (x, y)))
            .filter(|&(x, y)| x * x + y * y <= r2)
            .collect();
        // a coarse grid can miss a small disc entirely; tap the centre then
        let inside = if inside.is_empty() { vec![(0.0, 0.0)] } else { inside };
        for (x, y) in inside {
            push(Side::Top, Vec3::new(x, y, 0.0), &mut out);
        }
    }
    let lateral = centered_grid(dims.radius, pitch);
    let mut heights = Vec::new();
    let mut z = dims.height - vstep / 2.0;
    while z > vstep / 4.0 {
        heights.push(z);
        z -= vstep;
    }
    for (side, axis) in [(Side::Left, Vec3::y()), (Side::Back, Vec3::x())] {
        for &z in &heights {
            for &s in &lateral {
                push(side, axis * s + Vec3::z() * z, &mut out);
            }
        }
    }
    out
}

/// Full exploration: dimension estimate, then top (if wide enough), left and
/// back grids. Stops once `max_taps` contacts are recorded.
pub fn run_policy(obj: &SimObject, cfg: &PolicyConfig, g: &HandGeometry) -> Result<PolicyRun> {
    let dims = estimate_dimensions(obj, cfg, g)?;
    let top_enabled = dims.radius > cfg.radius_threshold;
    let two_scale = dims.height > cfg.height_threshold;
    let plan = plan(&dims, cfg, top_enabled, two_scale);
    let mut records = Vec::new();
    let mut valid = 0usize;
    for p in &plan {
        if valid >= cfg.max_taps {
            break;
        }
        let (hit, at) = tap(obj, g, cfg, p);
        let v = hit.is_some();
        valid += usize::from(v);
        records.push(TapRecord {
            x: at.x,
            y: at.y,
            z: at.z,
            a: v,
            v,
            f: p.finger,
            i: records.len() as u32,
        });
    }
    log::debug!(
        "policy: {} records, {valid} contacts, top {top_enabled}, two-scale {two_scale}",
        records.len()
    );
    Ok(PolicyRun {
        records,
        dimensions: dims,
        top_enabled,
        two_scale,
        plan,
    })
}
