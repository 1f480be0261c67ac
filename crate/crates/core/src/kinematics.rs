//! Forward kinematics of the four-finger tapping hand.
//!
//! Lengths are in centimeters and angles in degrees at the interface. The hand
//! frame has its origin at the palm center, `y` parallel to the finger joint
//! axes and `z` normal to the palm towards the fingers. Each finger is a single
//! link of length `l` rotating about its joint's `y` axis; with the joint at
//! `θ = rest_offset` the link points along `+x` of its joint frame (fingers 1
//! and 2) or `-x` (fingers 3 and 4, mounted facing them).
//!
//! Rotations are right-handed: `R_y(a)` maps `+x` towards `-z` for positive `a`.

use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector4};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::kv::KeyValues;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandGeometry {
    /// Joint-1 origin in the hand frame, cm.
    pub joint1: Vec3,
    /// Joint-to-fingertip distance, cm.
    pub link_length: f64,
    /// Joint angle at which the link lies along its joint frame's x axis, degrees.
    pub rest_offset_deg: f64,
    /// Mechanical joint range, degrees.
    pub theta_min_deg: f64,
    pub theta_max_deg: f64,
}

impl Default for HandGeometry {
    fn default() -> Self {
        Self {
            joint1: Vec3::new(7.845, 3.429, 13.691),
            link_length: 7.6,
            rest_offset_deg: 4.5,
            theta_min_deg: -90.0,
            theta_max_deg: 180.0,
        }
    }
}

const GEOMETRY_KEYS: &[&str] = &[
    "joint1_x_cm",
    "joint1_y_cm",
    "joint1_z_cm",
    "link_length_cm",
    "rest_offset_deg",
    "theta_min_deg",
    "theta_max_deg",
];

/// Finger index, 1 through 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Finger(u8);

impl Finger {
    pub const ALL: [Finger; 4] = [Finger(1), Finger(2), Finger(3), Finger(4)];

    pub fn new(index: u8) -> Result<Self> {
        if (1..=4).contains(&index) {
            Ok(Finger(index))
        } else {
            Err(Error::invalid(format!("finger index must be 1..=4, got {index}")))
        }
    }

    pub fn index(self) -> u8 {
        self.0
    }

    /// Fingers 3 and 4 sit on the `-x` side of the palm, facing 1 and 2.
    pub fn is_opposed(self) -> bool {
        self.0 >= 3
    }
}

impl HandGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.link_length > 0.0) {
            return Err(Error::invalid("link length must be positive"));
        }
        if !self.joint1.iter().all(|x| x.is_finite()) || !self.rest_offset_deg.is_finite() {
            return Err(Error::invalid("hand geometry must be finite"));
        }
        if !(self.theta_min_deg < self.theta_max_deg) {
            return Err(Error::invalid("joint range is empty"));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(GEOMETRY_KEYS)?;
        let d = Self::default();
        let g = Self {
            joint1: Vec3::new(
                kv.get("joint1_x_cm")?.unwrap_or(d.joint1.x),
                kv.get("joint1_y_cm")?.unwrap_or(d.joint1.y),
                kv.get("joint1_z_cm")?.unwrap_or(d.joint1.z),
            ),
            link_length: kv.get("link_length_cm")?.unwrap_or(d.link_length),
            rest_offset_deg: kv.get("rest_offset_deg")?.unwrap_or(d.rest_offset_deg),
            theta_min_deg: kv.get("theta_min_deg")?.unwrap_or(d.theta_min_deg),
            theta_max_deg: kv.get("theta_max_deg")?.unwrap_or(d.theta_max_deg),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&KeyValues::read(path)?)
    }

    /// Joint origins mirror joint 1 across the palm's x and y axes.
    pub fn joint_origin(&self, finger: Finger) -> Vec3 {
        let p = self.joint1;
        match finger.0 {
            1 => p,
            2 => Vec3::new(p.x, -p.y, p.z),
            3 => Vec3::new(-p.x, p.y, p.z),
            _ => Vec3::new(-p.x, -p.y, p.z),
        }
    }

    /// Link rotation in the hand frame for joint angle `theta_deg`.
    pub fn link_rotation(&self, finger: Finger, theta_deg: f64) -> Rotation3<f64> {
        if finger.is_opposed() {
            rot_y((theta_deg - self.rest_offset_deg).to_radians()) * rot_z(std::f64::consts::PI)
        } else {
            rot_y((-theta_deg + self.rest_offset_deg).to_radians())
        }
    }

    /// Fingertip center in the hand frame, cm.
    pub fn fingertip(&self, finger: Finger, theta_deg: f64) -> Vec3 {
        self.joint_origin(finger) + self.link_rotation(finger, theta_deg) * Vec3::new(self.link_length, 0.0, 0.0)
    }

    pub fn check_joint(&self, theta_deg: f64) -> Result<()> {
        if !theta_deg.is_finite() || theta_deg < self.theta_min_deg || theta_deg > self.theta_max_deg {
            return Err(Error::invalid(format!(
                "joint angle {theta_deg}° outside [{}, {}]",
                self.theta_min_deg, self.theta_max_deg
            )));
        }
        Ok(())
    }
}

fn rot_y(a: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vec3::y_axis(), a)
}

fn rot_z(a: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vec3::z_axis(), a)
}

/// Fingertip position of `finger` (1..=4) at joint angle `theta_deg`, hand frame, cm.
pub fn fingertip_in_hand(g: &HandGeometry, finger: u8, theta_deg: f64) -> Result<Vec3> {
    let finger = Finger::new(finger)?;
    g.check_joint(theta_deg)?;
    Ok(g.fingertip(finger, theta_deg))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointState {
    pub theta_deg: [f64; 4],
}

impl JointState {
    pub fn validate(&self, g: &HandGeometry) -> Result<()> {
        self.theta_deg.iter().try_for_each(|&t| g.check_joint(t))
    }

    pub fn fingertips(&self, g: &HandGeometry) -> Result<[Vec3; 4]> {
        self.validate(g)?;
        Ok(Finger::ALL.map(|f| g.fingertip(f, self.theta_deg[f.0 as usize - 1])))
    }
}

/// Rigid end-effector-to-arm-base transform. The hand frame coincides with
/// the end-effector frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmTransform(Matrix4<f64>);

impl ArmTransform {
    pub fn identity() -> Self {
        Self(Matrix4::identity())
    }

    pub fn new(m: Matrix4<f64>) -> Result<Self> {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let ortho = (r.transpose() * r - Matrix3::identity()).norm();
        if !m.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("transform has non-finite entries"));
        }
        if ortho >= 1e-9 {
            return Err(Error::invalid(format!("rotation block is not orthonormal (‖RᵀR − I‖ = {ortho:e})")));
        }
        if r.determinant() <= 0.0 {
            return Err(Error::invalid("rotation block is a reflection"));
        }
        if m.fixed_view::<1, 4>(3, 0) != Vector4::new(0.0, 0.0, 0.0, 1.0).transpose() {
            return Err(Error::invalid("bottom row must be [0 0 0 1]"));
        }
        Ok(Self(m))
    }

    pub fn from_parts(rotation: Rotation3<f64>, translation: Vec3) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self(m)
    }

    /// Parses 16 numbers in row-major order.
    pub fn from_row_major(values: &[f64]) -> Result<Self> {
        if values.len() != 16 {
            return Err(Error::invalid(format!("transform needs 16 values, got {}", values.len())));
        }
        Self::new(Matrix4::from_row_slice(values))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let values: Vec<f64> = text
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::invalid(format!("bad transform entry {t:?}"))))
            .collect::<Result<_>>()?;
        Self::from_row_major(&values)
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = self.0[(r, c)];
            }
        }
        out
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vec3 {
        self.0.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation() * p + self.translation()
    }
}

/// Maps a hand-frame point into the arm frame.
pub fn fingertip_in_arm(t: &ArmTransform, p_hand: &Vec3) -> Vec3 {
    t.apply(p_hand)
}
