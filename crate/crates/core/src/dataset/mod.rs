//! On-disk dataset layout, manifests, splits and sampling.
//!
//! ```text
//! <root>/manifest.json
//! <root>/objects/<id>/taps.txt
//! <root>/objects/<id>/audio/<i>.wav
//! <root>/objects/<id>/gt.xyz
//! ```

mod sampling;

pub use sampling::{
    assign_material_labels, balance_by_duplication, blend_fraction, reid_partition, sample_reid, split_material,
    split_objects, SplitSpec, TapPartition, BLEND_SCHEDULE, MATERIAL_SPLIT, REID_DRAWS_EVAL, REID_DRAWS_TRAIN,
    REID_K, SHAPE_SPLIT,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cloud::{read_xyz, PointCloud};
use crate::error::{Error, Result};
use crate::sim::{read_taps, TapRecord};

/// Points in every ground-truth cloud.
pub const GT_POINTS: usize = 5000;

#[derive(Debug, Clone)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn object_dir(&self, id: &str) -> PathBuf {
        self.root.join("objects").join(id)
    }

    pub fn taps_path(&self, id: &str) -> PathBuf {
        self.object_dir(id).join("taps.txt")
    }

    pub fn audio_path(&self, id: &str, tap: u32) -> PathBuf {
        self.object_dir(id).join("audio").join(format!("{tap}.wav"))
    }

    pub fn gt_path(&self, id: &str) -> PathBuf {
        self.object_dir(id).join("gt.xyz")
    }

    /// Extracted mel spectrogram of one tap.
    pub fn spectrogram_path(&self, id: &str, tap: u32) -> PathBuf {
        self.object_dir(id).join("spec").join(format!("{tap}.bin"))
    }

    pub fn features_path(&self, id: &str) -> PathBuf {
        self.object_dir(id).join("features.csv")
    }

    pub fn load_manifest(&self) -> Result<Manifest> {
        Manifest::read(&self.manifest_path())
    }

    pub fn load_object(&self, entry: &ManifestEntry) -> Result<ObjectRecord> {
        ObjectRecord::load(self, entry)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub shape_category: String,
    pub is_synthetic: bool,
    /// Frequency multiplier used when synthesizing this object's audio.
    #[serde(default = "one")]
    pub tone_scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub objects: Vec<ManifestEntry>,
    /// Object ids left out of every task.
    #[serde(default)]
    pub excluded: Vec<String>,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<&str> = self.objects.iter().map(|o| o.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("duplicate object id {:?}", w[0])));
        }
        for o in &self.objects {
            if o.id.is_empty() || o.id.contains(['/', '\\']) || o.id.starts_with('.') {
                return Err(Error::invalid(format!("object id {:?} is not a plain name", o.id)));
            }
        }
        for e in &self.excluded {
            if ids.binary_search(&e.as_str()).is_err() {
                return Err(Error::invalid(format!("excluded id {e:?} not in manifest")));
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_slice(&bytes)?;
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        std::fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Entries not on the exclusion list, in manifest order.
    pub fn active(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.objects.iter().filter(|o| !self.excluded.contains(&o.id))
    }

    pub fn active_ids(&self) -> Vec<String> {
        self.active().map(|o| o.id.clone()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ObjectRecord {
    pub object_id: String,
    pub taps: Vec<TapRecord>,
    /// Recording for each tap with voltage contact, in tap order.
    pub clip_paths: Vec<(u32, PathBuf)>,
    pub gt_cloud: PointCloud,
    pub shape_category: String,
    pub is_synthetic: bool,
    pub tone_scale: f64,
}

impl ObjectRecord {
    pub fn load(layout: &DatasetLayout, entry: &ManifestEntry) -> Result<Self> {
        let id = &entry.id;
        let taps = read_taps(&layout.taps_path(id))?;
        let mut clip_paths = Vec::new();
        for t in taps.iter().filter(|t| t.v) {
            let p = layout.audio_path(id, t.i);
            if !p.is_file() {
                return Err(Error::invalid(format!("{id}: tap {} has no recording at {}", t.i, p.display())));
            }
            clip_paths.push((t.i, p));
        }
        let gt_cloud = read_xyz(&layout.gt_path(id))?;
        if gt_cloud.len() != GT_POINTS || gt_cloud.labels.is_none() {
            return Err(Error::invalid(format!(
                "{id}: ground truth must hold {GT_POINTS} labelled points, found {}{}",
                gt_cloud.len(),
                if gt_cloud.labels.is_none() { " without labels" } else { "" }
            )));
        }
        Ok(Self {
            object_id: id.clone(),
            taps,
            clip_paths,
            gt_cloud,
            shape_category: entry.shape_category.clone(),
            is_synthetic: entry.is_synthetic,
            tone_scale: entry.tone_scale,
        })
    }

    pub fn contacts(&self) -> impl Iterator<Item = &TapRecord> {
        self.taps.iter().filter(|t| t.v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::write_xyz;
    use crate::geometry::Vec3;
    use crate::sim::export_taps;

    fn entry(id: &str) -> ManifestEntry {
        ManifestEntry {
            id: id.into(),
            shape_category: "cube".into(),
            is_synthetic: true,
            tone_scale: 1.0,
        }
    }

    #[test]
    fn manifest_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest {
            objects: vec![entry("a"), entry("b")],
            excluded: vec!["b".into()],
        };
        let p = dir.path().join("m.json");
        m.write(&p).unwrap();
        let back = Manifest::read(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.active_ids(), vec!["a".to_string()]);
        let dup = Manifest { objects: vec![entry("a"), entry("a")], excluded: vec![] };
        assert!(dup.validate().is_err());
        let bad = Manifest { objects: vec![entry("../x")], excluded: vec![] };
        assert!(bad.validate().is_err());
        let missing = Manifest { objects: vec![entry("a")], excluded: vec!["z".into()] };
        assert!(missing.validate().is_err());
    }

    #[test]
    fn object_load_checks_recordings() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout::new(dir.path());
        std::fs::create_dir_all(layout.object_dir("a").join("audio")).unwrap();
        let taps = vec![
            TapRecord { x: 0.0, y: 0.0, z: 0.1, a: true, v: true, f: 1, i: 0 },
            TapRecord { x: 0.0, y: 0.0, z: 0.2, a: false, v: false, f: 2, i: 1 },
        ];
        export_taps(&taps, &layout.taps_path("a")).unwrap();
        let pts: Vec<Vec3> = (0..GT_POINTS).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        write_xyz(&layout.gt_path("a"), &PointCloud::labeled(pts, vec![0; GT_POINTS]).unwrap()).unwrap();
        assert!(layout.load_object(&entry("a")).is_err());
        crate::audio::write_wav(&layout.audio_path("a", 0), &crate::audio::Waveform::new(vec![0.0; 10]).unwrap()).unwrap();
        let rec = layout.load_object(&entry("a")).unwrap();
        assert_eq!(rec.clip_paths.len(), 1);
        assert_eq!(rec.contacts().count(), 1);
    }
}
