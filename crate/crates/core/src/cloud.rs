//! Point clouds and their on-disk formats.
//!
//! * XYZ text: one point per line, 3 columns, or 4 with an integer material label.
//! * Binary: little-endian `f32` triples (row-major) plus a JSON sidecar
//!   `{ "points": N, "labels": [...] | null }` at `<path>.json`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    /// Optional per-point material label (0..8).
    pub labels: Option<Vec<u8>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        let c = Self { points, labels: None };
        c.validate()?;
        Ok(c)
    }

    pub fn labeled(points: Vec<Vec3>, labels: Vec<u8>) -> Result<Self> {
        let c = Self {
            points,
            labels: Some(labels),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::invalid("point cloud is empty"));
        }
        if !self.points.iter().all(|p| p.iter().all(|x| x.is_finite())) {
            return Err(Error::invalid("point cloud has non-finite coordinates"));
        }
        if let Some(l) = &self.labels {
            if l.len() != self.points.len() {
                return Err(Error::invalid(format!(
                    "{} labels for {} points",
                    l.len(),
                    self.points.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        self.points.iter().sum::<Vec3>() / self.points.len() as f64
    }

    pub fn map_points(&self, f: impl Fn(&Vec3) -> Vec3) -> Self {
        Self {
            points: self.points.iter().map(f).collect(),
            labels: self.labels.clone(),
        }
    }
}

pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = String::with_capacity(cloud.len() * 48);
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(out, "{:?} {:?} {:?}", p.x, p.y, p.z);
        if let Some(l) = &cloud.labels {
            let _ = write!(out, " {}", l[i]);
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_xyz(&path.display().to_string(), &text)
}

pub(crate) fn parse_xyz(name: &str, text: &str) -> Result<PointCloud> {
    let err = |line: usize, message: String| Error::Parse {
        path: name.to_string(),
        line,
        message,
    };
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut columns: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 3 && fields.len() != 4 {
            return Err(err(i + 1, format!("expected 3 or 4 columns, got {}", fields.len())));
        }
        match columns {
            None => columns = Some(fields.len()),
            Some(c) if c != fields.len() => {
                return Err(err(i + 1, format!("column count changed from {c} to {}", fields.len())))
            }
            _ => {}
        }
        let mut xyz = [0.0; 3];
        for (k, f) in fields[..3].iter().enumerate() {
            xyz[k] = f
                .parse()
                .map_err(|_| err(i + 1, format!("bad coordinate {f:?}")))?;
        }
        points.push(Vec3::from(xyz));
        if fields.len() == 4 {
            labels.push(
                fields[3]
                    .parse::<u8>()
                    .map_err(|_| err(i + 1, format!("bad label {:?}", fields[3])))?,
            );
        }
    }
    let cloud = PointCloud {
        points,
        labels: (columns == Some(4)).then_some(labels),
    };
    cloud.validate()?;
    Ok(cloud)
}

#[derive(Debug, Serialize, Deserialize)]
struct BinarySidecar {
    points: usize,
    dtype: String,
    labels: Option<Vec<u8>>,
}

pub(crate) fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_binary(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut bytes = Vec::with_capacity(cloud.len() * 12);
    for p in &cloud.points {
        for x in p.iter() {
            bytes.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = BinarySidecar {
        points: cloud.len(),
        dtype: "f32le".into(),
        labels: cloud.labels.clone(),
    };
    let sp = sidecar_path(path);
    std::fs::write(&sp, serde_json::to_vec_pretty(&side)?).map_err(|e| Error::io(sp, e))
}

pub fn read_binary(path: &Path) -> Result<PointCloud> {
    let sp = sidecar_path(path);
    let side: BinarySidecar =
        serde_json::from_slice(&std::fs::read(&sp).map_err(|e| Error::io(&sp, e))?)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if side.dtype != "f32le" || bytes.len() != side.points * 12 {
        return Err(Error::invalid(format!(
            "{}: expected {} f32le points, found {} bytes",
            path.display(),
            side.points,
            bytes.len()
        )));
    }
    let points = bytes
        .chunks_exact(12)
        .map(|c| {
            let f = |k: usize| f32::from_le_bytes(c[k * 4..k * 4 + 4].try_into().unwrap()) as f64;
            Vec3::new(f(0), f(1), f(2))
        })
        .collect();
    let cloud = PointCloud {
        points,
        labels: side.labels,
    };
    cloud.validate()?;
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xyz_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.xyz");
        let cloud = PointCloud::labeled(
            vec![Vec3::new(0.1, -2.5e-7, 3.0), Vec3::new(1.0 / 3.0, 0.0, -1.0)],
            vec![2, 8],
        )
        .unwrap();
        write_xyz(&p, &cloud).unwrap();
        assert_eq!(read_xyz(&p).unwrap(), cloud);
    }

    #[test]
    fn xyz_rejects_mixed_columns() {
        let e = parse_xyz("m.xyz", "0 0 0\n1 1 1 2\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        assert!(parse_xyz("e.xyz", "").is_err());
        assert!(parse_xyz("b.xyz", "0 0\n").is_err());
    }

    #[test]
    fn binary_round_trip_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        let cloud = PointCloud::new(vec![Vec3::new(0.5, 0.25, -1.0), Vec3::new(2.0, 4.0, 8.0)]).unwrap();
        write_binary(&p, &cloud).unwrap();
        assert_eq!(read_binary(&p).unwrap(), cloud);
    }
}
