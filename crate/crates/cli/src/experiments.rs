//! Scaled synthetic end-to-end experiments: data is simulated in memory, then
//! trained and evaluated with the same task code the CLI stages use.

use anyhow::{ensure, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tapsense_core::audio::{detect_strike, extract_clip, MelExtractor, SpectrogramNorm, Waveform, STRIKE_WINDOW};
use tapsense_core::exec::Exec;
use tapsense_core::geometry::{Primitive, Vec3};
use tapsense_core::kinematics::HandGeometry;
use tapsense_core::material::Material;
use tapsense_core::refine::RefineConfig;
use tapsense_core::shape::sample_mesh_surface;
use tapsense_core::sim::{add_noise, run_policy, PolicyConfig, SimObject, TapRecord};
use tapsense_core::synth::{synth_contact, synth_for_taps, MaterialTable, SynthConfig};
use tapsense_nets::{Modality, ShapeNetDims, TrainConfig};

use crate::config::ShapeSettings;
use crate::tasks::{
    eval_material, eval_shape, reid_accuracy, reid_split, train_material, train_reid, train_shape, ReidObject,
    ShapeItem, SpecItem,
};

/// Spectrogram input of a recording, or `None` when no strike is detected.
pub fn spectrogram_input(mel: &MelExtractor, w: &Waveform) -> Result<Option<Vec<f64>>> {
    Ok(match detect_strike(w, STRIKE_WINDOW)? {
        Some(offset) => Some(mel.extract(&extract_clip(w, offset)?).to_input(SpectrogramNorm::Standardize)),
        None => None,
    })
}

pub fn mel_extractor() -> MelExtractor {
    MelExtractor::new(16384.0).expect("valid mel settings")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaterialSetup {
    pub classes: Vec<Material>,
    pub objects_per_class: usize,
    pub strikes_per_object: usize,
    /// Objects per class in (train, val, test).
    pub split: (usize, usize, usize),
    /// Per-object tone scales are drawn from `1 ± tone_spread`.
    pub tone_spread: f64,
    pub data_seed: u64,
    pub train: TrainConfig,
    pub random_trials: usize,
}

impl Default for MaterialSetup {
    fn default() -> Self {
        let mut train = TrainConfig::material();
        train.max_epochs = 20;
        train.decay = None;
        Self {
            classes: vec![Material::Plastic, Material::Glass, Material::Wood, Material::Metal, Material::Ceramic],
            objects_per_class: 10,
            strikes_per_object: 20,
            split: (6, 2, 2),
            tone_spread: 0.10,
            data_seed: 7,
            train,
            random_trials: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialResult {
    pub seed: u64,
    pub model_f1: f64,
    pub refined_f1: f64,
    pub nn_f1: f64,
    pub random_f1: f64,
    pub best_epoch: usize,
}

/// Strikes of every object; object `o` belongs to class `o / objects_per_class`.
pub fn material_data(setup: &MaterialSetup, exec: Exec) -> Result<Vec<SpecItem>> {
    let table = MaterialTable::default();
    let mel = mel_extractor();
    let n_objects = setup.classes.len() * setup.objects_per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(setup.data_seed);
    let objects: Vec<(usize, f64, Vec3)> = (0..n_objects)
        .map(|o| {
            let tone = 1.0 + rng.random_range(-setup.tone_spread..=setup.tone_spread);
            (o, tone, Vec3::new(rng.random(), rng.random(), rng.random()) * 0.1)
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..n_objects)
        .flat_map(|o| (0..setup.strikes_per_object).map(move |s| (o, s)))
        .collect();
    let out = exec.map(&jobs, |&(o, s)| -> Result<Option<SpecItem>> {
        let class = o / setup.objects_per_class;
        let cfg = SynthConfig {
            duration: 1.0,
            seed: setup.data_seed ^ (o as u64 + 1).wrapping_mul(0x9e37_79b9),
            ..Default::default()
        };
        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
        r.set_stream(s as u64);
        let t = r.random_range(0.05..0.5);
        let w = synth_contact(table.get(setup.classes[class]), &cfg, t, objects[o].1, s as u64)?;
        let jitter = Vec3::new(r.random(), r.random(), r.random()) * 0.05;
        Ok(spectrogram_input(&mel, &w)?.map(|input| SpecItem {
            object: o,
            point: objects[o].2 + jitter,
            input,
            label: class,
        }))
    });
    let mut items = Vec::with_capacity(jobs.len());
    let mut missed = 0;
    for r in out {
        match r? {
            Some(it) => items.push(it),
            None => missed += 1,
        }
    }
    if missed > 0 {
        log::warn!("material data: {missed} strikes not detected");
    }
    Ok(items)
}

/// Object-disjoint split stratified by class.
pub fn stratified_object_split(
    n_classes: usize,
    per_class: usize,
    counts: (usize, usize, usize),
    seed: u64,
) -> Result<[Vec<usize>; 3]> {
    ensure!(counts.0 + counts.1 + counts.2 == per_class, "split counts must cover every object of a class");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: [Vec<usize>; 3] = Default::default();
    for c in 0..n_classes {
        let mut ids: Vec<usize> = (c * per_class..(c + 1) * per_class).collect();
        ids.shuffle(&mut rng);
        out[0].extend_from_slice(&ids[..counts.0]);
        out[1].extend_from_slice(&ids[counts.0..counts.0 + counts.1]);
        out[2].extend_from_slice(&ids[counts.0 + counts.1..]);
    }
    Ok(out)
}

pub fn run_material(setup: &MaterialSetup, data: &[SpecItem], seed: u64, exec: Exec) -> Result<MaterialResult> {
    let [tr, va, te] = stratified_object_split(setup.classes.len(), setup.objects_per_class, setup.split, seed)?;
    let pick = |ids: &[usize]| -> Vec<SpecItem> { data.iter().filter(|s| ids.contains(&s.object)).cloned().collect() };
    let (train_items, val_items, test_items) = (pick(&tr), pick(&va), pick(&te));
    let cfg = TrainConfig { seed, ..setup.train.clone() };
    let (net, outcome) = train_material(&train_items, &val_items, setup.classes.len(), &cfg)?;
    let refine = RefineConfig::new(8, 3, 25)?;
    let e = eval_material(&net, &test_items, &train_items, &refine, seed, setup.random_trials, exec)?;
    Ok(MaterialResult {
        seed,
        model_f1: e.model_f1(),
        refined_f1: e.refined_f1(),
        nn_f1: e.nn_f1(),
        random_f1: e.random.mean,
        best_epoch: outcome.best_epoch,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapeSetup {
    pub n_train: usize,
    pub n_test: usize,
    pub data_seed: u64,
    pub policy: PolicyConfig,
    pub dims: ShapeNetDims,
    pub settings: ShapeSettings,
    pub train: TrainConfig,
}

impl Default for ShapeSetup {
    fn default() -> Self {
        let mut train = TrainConfig::shape();
        train.lr = 1e-3;
        train.batch_size = 16;
        train.max_epochs = 60;
        train.decay = None;
        Self {
            n_train: 30,
            n_test: 6,
            data_seed: 11,
            policy: PolicyConfig::default(),
            dims: ShapeNetDims::default(),
            settings: ShapeSettings {
                augment_copies: 2,
                ..Default::default()
            },
            train,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeResult {
    pub seed: u64,
    pub model_cd: f64,
    pub nn_cd: f64,
    pub random_cd: f64,
    pub best_epoch: usize,
}

/// The `i`-th primitive of the experiment family, with seeded dimensions in
/// meters: footprints of 6 to 14 cm and heights of 5 to 15 cm.
pub fn random_primitive(i: usize, rng: &mut impl Rng) -> Primitive {
    let r = rng.random_range(0.03..0.07);
    let h = rng.random_range(0.05..0.15);
    match i % 6 {
        0 => Primitive::Box { size: Vec3::new(2.0 * r, rng.random_range(0.06..0.14), h) },
        1 => Primitive::Cylinder { radius: r, height: h, segments: 24 },
        2 => Primitive::Cone { radius: r, height: h, segments: 24 },
        3 => Primitive::Pyramid { side: 2.0 * r, height: h },
        4 => Primitive::Prism { radius: r, height: h },
        _ => Primitive::Sphere { radius: r, rings: 12, segments: 24 },
    }
}

/// Valid (noisy) tap points of a simulated exploration.
pub fn explore(obj: &SimObject, policy: &PolicyConfig, seed: u64) -> Result<Vec<TapRecord>> {
    let run = run_policy(obj, policy, &HandGeometry::default())?;
    let valid: Vec<TapRecord> = run.valid().copied().collect();
    Ok(add_noise(&valid, policy.noise_sigma, seed)?)
}

/// Simulated contacts and 5000-point ground truth of `n` seeded primitives.
pub fn shape_data(n: usize, policy: &PolicyConfig, data_seed: u64, exec: Exec) -> Result<Vec<ShapeItem>> {
    let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
    let prims: Vec<(usize, Primitive)> = (0..n).map(|i| (i, random_primitive(i, &mut rng))).collect();
    let out = exec.map(&prims, |(i, p)| -> Result<ShapeItem> {
        let mesh = p.mesh();
        let obj = SimObject::uniform(mesh.clone(), Material::Plastic)?;
        let seed = data_seed ^ (*i as u64 + 1).wrapping_mul(0x9e37_79b9);
        let taps = explore(&obj, policy, seed)?;
        ensure!(taps.len() >= 10, "primitive {i} ({}) produced only {} contacts", p.category(), taps.len());
        Ok(ShapeItem {
            object: *i,
            contacts: taps.iter().map(TapRecord::point).collect(),
            gt: sample_mesh_surface(&mesh, tapsense_core::dataset::GT_POINTS, seed)?.points,
            synthetic: true,
        })
    });
    out.into_iter().collect()
}

/// Random held-out objects; the training objects double as the model
/// selection set so the held-out ones stay untouched.
pub fn run_shape(setup: &ShapeSetup, data: &[ShapeItem], seed: u64, exec: Exec) -> Result<ShapeResult> {
    ensure!(data.len() == setup.n_train + setup.n_test, "expected {} objects", setup.n_train + setup.n_test);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train_items: Vec<ShapeItem> = order[..setup.n_train].iter().map(|&i| data[i].clone()).collect();
    let test_items: Vec<ShapeItem> = order[setup.n_train..].iter().map(|&i| data[i].clone()).collect();
    let cfg = TrainConfig { seed, ..setup.train.clone() };
    let (net, outcome) = train_shape(&train_items, &train_items, setup.dims, &cfg, &setup.settings)?;
    let e = eval_shape(&net, &test_items, &train_items, setup.settings.scale, exec)?;
    Ok(ShapeResult {
        seed,
        model_cd: e.model_cd(),
        nn_cd: e.nn_cd(),
        random_cd: e.random_cd(),
        best_epoch: outcome.best_epoch,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReidSetup {
    pub n_objects: usize,
    pub draws_train: usize,
    pub draws_eval: usize,
    pub data_seed: u64,
    pub policy: PolicyConfig,
    pub train: TrainConfig,
}

impl Default for ReidSetup {
    fn default() -> Self {
        let mut train = TrainConfig::reid();
        train.lr = 1e-3;
        train.batch_size = 16;
        train.max_epochs = 12;
        Self {
            n_objects: 10,
            draws_train: 60,
            draws_eval: 50,
            data_seed: 23,
            policy: PolicyConfig::default(),
            train,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReidResult {
    pub seed: u64,
    pub fused: f64,
    pub audio_only: f64,
    pub points_only: f64,
}

/// Ten objects built from five geometries, each used twice with different
/// materials, so geometry alone cannot tell the pairs apart. One material
/// also appears on two geometries.
pub fn reid_objects() -> Vec<(Primitive, Material)> {
    let geoms = [
        Primitive::Cylinder { radius: 0.05, height: 0.12, segments: 24 },
        Primitive::Box { size: Vec3::new(0.10, 0.08, 0.10) },
        Primitive::Prism { radius: 0.06, height: 0.11 },
        Primitive::Cylinder { radius: 0.07, height: 0.07, segments: 24 },
        Primitive::Box { size: Vec3::new(0.12, 0.12, 0.06) },
    ];
    let mats = [
        Material::Plastic,
        Material::Glass,
        Material::Wood,
        Material::Metal,
        Material::Ceramic,
        Material::Paper,
        Material::Rubber,
        Material::Foam,
        Material::Fabric,
        Material::Metal,
    ];
    (0..10).map(|i| (geoms[i / 2], mats[i])).collect()
}

pub fn reid_data(setup: &ReidSetup, exec: Exec) -> Result<Vec<ReidObject>> {
    let table = MaterialTable::default();
    let mel = mel_extractor();
    let specs = reid_objects();
    ensure!(setup.n_objects <= specs.len(), "at most {} re-identification objects", specs.len());
    let mut out = Vec::with_capacity(setup.n_objects);
    for (o, (prim, material)) in specs.into_iter().take(setup.n_objects).enumerate() {
        let seed = setup.data_seed ^ (o as u64 + 1).wrapping_mul(0x9e37_79b9);
        // the repeated material differs in tone so the two objects stay distinct
        let tone = if o == 9 { 1.12 } else { 1.0 };
        let obj = SimObject::uniform(prim.mesh(), material)?.with_tone_scale(tone)?;
        let taps = explore(&obj, &setup.policy, seed)?;
        let cfg = SynthConfig { duration: 1.5, seed, ..Default::default() };
        let recs = synth_for_taps(&taps, &obj, &table, &cfg, exec)?;
        let mut r = ReidObject::default();
        for (rec, w) in &recs {
            // soft materials rarely trip the onset detector; their clip starts at the recording start
            let input = match spectrogram_input(&mel, w)? {
                Some(x) => x,
                None => mel.extract(&extract_clip(w, 0)?).to_input(SpectrogramNorm::Standardize),
            };
            r.points.push(rec.point());
            r.inputs.push(input);
        }
        out.push(r);
    }
    Ok(out)
}

pub fn run_reid(setup: &ReidSetup, data: &[ReidObject], seed: u64) -> Result<ReidResult> {
    let split = reid_split(data, setup.draws_train, setup.draws_eval, seed)?;
    ensure!(
        split.kept.len() == data.len(),
        "only {} of {} objects have enough taps",
        split.kept.len(),
        data.len()
    );
    let cfg = TrainConfig { seed, ..setup.train.clone() };
    let mut acc = [0.0; 3];
    for (k, m) in Modality::ALL.into_iter().enumerate() {
        let (net, _) = train_reid(data, &split, m, &cfg)?;
        acc[k] = reid_accuracy(&net, data, &split.test)?;
    }
    Ok(ReidResult {
        seed,
        fused: acc[0],
        audio_only: acc[1],
        points_only: acc[2],
    })
}
