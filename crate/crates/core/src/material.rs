use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The nine material categories; the discriminant is the class id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum Material {
    Plastic = 0,
    Glass = 1,
    Wood = 2,
    Metal = 3,
    Ceramic = 4,
    Paper = 5,
    Rubber = 6,
    Foam = 7,
    Fabric = 8,
}

pub const N_MATERIALS: usize = 9;

impl Material {
    pub const ALL: [Material; N_MATERIALS] = [
        Material::Plastic,
        Material::Glass,
        Material::Wood,
        Material::Metal,
        Material::Ceramic,
        Material::Paper,
        Material::Rubber,
        Material::Foam,
        Material::Fabric,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self> {
        Self::ALL
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::invalid(format!("material id {id} out of range 0..{N_MATERIALS}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Material::Plastic => "plastic",
            Material::Glass => "glass",
            Material::Wood => "wood",
            Material::Metal => "metal",
            Material::Ceramic => "ceramic",
            Material::Paper => "paper",
            Material::Rubber => "rubber",
            Material::Foam => "foam",
            Material::Fabric => "fabric",
        }
    }

    /// Soft materials barely ring when tapped.
    pub fn is_soft(self) -> bool {
        matches!(self, Material::Foam | Material::Fabric)
    }
}

impl fmt::Display for Material {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Material {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(id) = s.parse::<u8>() {
            return Self::from_id(id);
        }
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown material {s:?}")))
    }
}
