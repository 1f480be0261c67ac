//! Simulated tapping exploration of a fixed object.
//!
//! World frame: metres, the object rests on the base plane `z = 0`, and the
//! base centerline is the `y` axis (distance to it is `|x|`).

mod policy;
mod taps;

pub use policy::{estimate_dimensions, run_policy, PlannedTap, PolicyRun, Side};
pub use taps::{add_noise, export_taps, format_taps, parse_taps, read_taps};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{RayHit, TriMesh, Vec3};
use crate::kv::KeyValues;
use crate::material::Material;

#[derive(Debug, Clone)]
pub struct SimObject {
    pub mesh: TriMesh,
    pub face_materials: Vec<Material>,
    /// Per-object multiplier on synthesized mode frequencies.
    pub tone_scale: f64,
}

impl SimObject {
    pub fn new(mesh: TriMesh, face_materials: Vec<Material>) -> Result<Self> {
        mesh.validate()?;
        if face_materials.len() != mesh.faces.len() {
            return Err(Error::invalid(format!(
                "{} face materials for {} faces",
                face_materials.len(),
                mesh.faces.len()
            )));
        }
        let b = mesh.bounds();
        if b.min.z < -1e-9 {
            return Err(Error::invalid(format!("object extends below the base (z = {})", b.min.z)));
        }
        if !(b.min.x < 0.0 && b.max.x > 0.0) {
            return Err(Error::invalid("object does not cross the base centerline"));
        }
        Ok(Self {
            mesh,
            face_materials,
            tone_scale: 1.0,
        })
    }

    pub fn uniform(mesh: TriMesh, material: Material) -> Result<Self> {
        let n = mesh.faces.len();
        Self::new(mesh, vec![material; n])
    }

    pub fn with_tone_scale(mut self, tone: f64) -> Result<Self> {
        if !(tone > 0.0 && tone.is_finite()) {
            return Err(Error::invalid("tone scale must be positive"));
        }
        self.tone_scale = tone;
        Ok(self)
    }

    /// Material of the face nearest to `p`.
    pub fn material_at(&self, p: &Vec3) -> Material {
        let (face, _) = self.mesh.closest_face(p).expect("validated mesh has faces");
        self.face_materials[face]
    }
}

/// First surface hit along `origin + t·direction`, `0 < t <= travel`.
pub fn probe_contact(obj: &SimObject, origin: &Vec3, direction: &Vec3, travel: f64) -> Result<Option<RayHit>> {
    if (direction.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("probe direction must be a unit vector"));
    }
    if obj.mesh.faces.is_empty() {
        return Err(Error::invalid("probe against an empty mesh"));
    }
    if !obj.mesh.bounds().hits_segment(origin, direction, travel) {
        return Ok(None);
    }
    Ok(obj.mesh.ray_cast(origin, direction, travel))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub descend_step: f64,
    pub radius_threshold: f64,
    pub height_threshold: f64,
    pub max_height: f64,
    pub max_taps: usize,
    pub lateral_pitch: f64,
    pub vertical_step: f64,
    /// Pitches used once the object exceeds `height_threshold`.
    pub large_lateral_pitch: f64,
    pub large_vertical_step: f64,
    /// Hand advance between finger sweeps while approaching a target.
    pub approach_step: f64,
    pub sweep_step_deg: f64,
    pub sweep_start_deg: f64,
    pub sweep_end_deg: f64,
    /// Half-width of the reachable workspace around the centerline.
    pub workspace: f64,
    pub contact_tolerance: f64,
    pub noise_sigma: f64,
    /// Heights of the two initial side taps; the second applies to both in two-scale mode.
    pub rough_heights: [f64; 2],
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            descend_step: 0.01,
            radius_threshold: 0.02,
            height_threshold: 0.20,
            max_height: 0.35,
            max_taps: 300,
            lateral_pitch: 0.015,
            vertical_step: 0.01,
            large_lateral_pitch: 0.03,
            large_vertical_step: 0.02,
            approach_step: 0.005,
            sweep_step_deg: 0.5,
            sweep_start_deg: 0.0,
            sweep_end_deg: 135.0,
            workspace: 0.30,
            contact_tolerance: 0.001,
            noise_sigma: 0.002,
            rough_heights: [0.03, 0.10],
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("descend_step", self.descend_step),
            ("radius_threshold", self.radius_threshold),
            ("height_threshold", self.height_threshold),
            ("max_height", self.max_height),
            ("lateral_pitch", self.lateral_pitch),
            ("vertical_step", self.vertical_step),
            ("large_lateral_pitch", self.large_lateral_pitch),
            ("large_vertical_step", self.large_vertical_step),
            ("approach_step", self.approach_step),
            ("sweep_step_deg", self.sweep_step_deg),
            ("workspace", self.workspace),
            ("contact_tolerance", self.contact_tolerance),
        ];
        for (k, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{k} must be positive, got {v}")));
            }
        }
        if self.max_taps == 0 {
            return Err(Error::invalid("max_taps must be positive"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma must be nonnegative"));
        }
        if !(self.sweep_start_deg < self.sweep_end_deg && self.sweep_start_deg >= -90.0 && self.sweep_end_deg <= 180.0) {
            return Err(Error::invalid("sweep range must lie inside the joint limits"));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut c = Self::default();
        macro_rules! keys {
            ($($f:ident),*) => {
                kv.reject_unknown(&[$(stringify!($f)),*, "rough_height_low", "rough_height_high"])?;
                $( if let Some(v) = kv.get(stringify!($f))? { c.$f = v; } )*
            };
        }
        keys!(
            descend_step, radius_threshold, height_threshold, max_height, max_taps, lateral_pitch, vertical_step,
            large_lateral_pitch, large_vertical_step, approach_step, sweep_step_deg, sweep_start_deg, sweep_end_deg,
            workspace, contact_tolerance, noise_sigma
        );
        if let Some(v) = kv.get("rough_height_low")? {
            c.rough_heights[0] = v;
        }
        if let Some(v) = kv.get("rough_height_high")? {
            c.rough_heights[1] = v;
        }
        c.validate()?;
        Ok(c)
    }
}

/// One tap: `{x, y, z, a, v, f, i}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TapRecord {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Contact judged from the audio.
    pub a: bool,
    /// Contact judged from the motor voltage; authoritative.
    pub v: bool,
    pub f: u8,
    pub i: u32,
}

impl TapRecord {
    pub fn point(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionEstimate {
    pub height: f64,
    pub radius: f64,
}
