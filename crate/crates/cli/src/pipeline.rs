//! The on-disk pipeline stages behind each subcommand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use tapsense_core::audio::{
    detect_strike, extract_clip, read_spectrogram, read_wav, write_descriptor_csv, write_spectrogram, write_wav,
    DescriptorExtractor, DescriptorParams, SpectrogramNorm, STRIKE_WINDOW,
};
use tapsense_core::cloud::{write_xyz, PointCloud};
use tapsense_core::dataset::{
    assign_material_labels, split_material, split_objects, DatasetLayout, Manifest, ManifestEntry, ObjectRecord,
    SplitSpec, GT_POINTS, SHAPE_SPLIT,
};
use tapsense_core::eval::{aggregate, macro_f1, read_reports, AggregateRow, EvalReport, Task};
use tapsense_core::exec::Exec;
use tapsense_core::geometry::{read_mesh, Vec3};
use tapsense_core::kinematics::HandGeometry;
use tapsense_core::material::{Material, N_MATERIALS};
use tapsense_core::shape::sample_mesh_surface_with_faces;
use tapsense_core::sim::{add_noise, export_taps, run_policy, SimObject, TapRecord};
use tapsense_core::synth::{synth_for_taps, MaterialTable, SynthConfig};
use tapsense_core::Error;
use tapsense_nets::checkpoint;
use tapsense_nets::{MaterialNet, Modality, ReidNet, ShapeNet, ShapeNetDims};

use crate::config::RunConfig;
use crate::experiments::mel_extractor;
use crate::provenance::Provenance;
use crate::tasks::{
    eval_material, eval_shape, refine_by_object, reid_accuracy, reid_report, reid_split, train_material, train_reid,
    train_shape, ReidObject, ShapeItem, SpecItem,
};

pub fn exec_for(cfg: &RunConfig) -> Exec {
    if cfg.jobs == 1 {
        Exec::Sequential
    } else {
        Exec::Parallel
    }
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn derive_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Directory of one training run.
pub fn run_dir(cfg: &RunConfig, task: Task) -> PathBuf {
    cfg.out.join(task.to_string()).join(format!("seed{}", cfg.seed))
}

pub fn reports_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("reports")
}

fn mesh_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        bail!("mesh directory {} does not exist", dir.display());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                Some("obj" | "ply")
            )
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .obj or .ply meshes in {}", dir.display());
    }
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulateSummary {
    pub objects: usize,
    pub skipped: usize,
    pub taps: usize,
    pub recordings: usize,
}

/// Explores every mesh in `mesh_dir` and writes a dataset tree under `data_root`.
pub fn simulate(cfg: &RunConfig) -> Result<SimulateSummary> {
    let exec = exec_for(cfg);
    let files = mesh_files(&cfg.mesh_dir)?;
    let table = match &cfg.materials {
        Some(p) => MaterialTable::load(p)?,
        None => MaterialTable::default(),
    };
    let layout = DatasetLayout::new(&cfg.data_root);
    mkdir(&layout.root)?;
    let hand = HandGeometry::default();
    let mut prov = Provenance::new("simulate", cfg);
    let mut manifest = Manifest::default();
    let mut summary = SimulateSummary { objects: 0, skipped: 0, taps: 0, recordings: 0 };
    for (k, path) in files.iter().enumerate() {
        prov.add_input(path)?;
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let seed = derive_seed(cfg.seed, k);
        let (mesh, ids) = read_mesh(path)?;
        // rest the mesh on the base plane, centred on the vertical axis
        let b = mesh.bounds();
        let mesh = mesh.translated(Vec3::new(-(b.min.x + b.max.x) / 2.0, -(b.min.y + b.max.y) / 2.0, -b.min.z));
        let materials = ids.iter().map(|&m| Material::from_id(m)).collect::<tapsense_core::Result<Vec<_>>>()?;
        let tone = ChaCha8Rng::seed_from_u64(seed).random_range(0.9..1.1);
        let obj = SimObject::new(mesh.clone(), materials.clone())?.with_tone_scale(tone)?;
        let run = match run_policy(&obj, &cfg.policy, &hand) {
            Ok(r) => r,
            Err(Error::ObjectNotFound) => {
                log::warn!("{id}: no contact found, skipped");
                summary.skipped += 1;
                continue;
            }
            Err(e) => return Err(e).with_context(|| format!("exploring {id}")),
        };
        let synth_cfg = SynthConfig { seed: cfg.synth.seed ^ seed, ..cfg.synth.clone() };
        let recordings = synth_for_taps(&run.records, &obj, &table, &synth_cfg, exec)?;
        let heard: BTreeMap<u32, bool> = recordings.iter().map(|(r, _)| (r.i, r.a)).collect();
        let mut taps = add_noise(&run.records, cfg.policy.noise_sigma, seed ^ 0x0015e)?;
        for t in &mut taps {
            t.a = heard.get(&t.i).copied().unwrap_or(false);
        }
        let dir = layout.object_dir(&id);
        mkdir(&dir.join("audio"))?;
        export_taps(&taps, &layout.taps_path(&id))?;
        for (r, w) in &recordings {
            write_wav(&layout.audio_path(&id, r.i), w)?;
        }
        let (points, faces) = sample_mesh_surface_with_faces(&mesh, GT_POINTS, seed ^ 0x6e)?;
        let labels = faces.iter().map(|&f| materials[f].id()).collect();
        write_xyz(&layout.gt_path(&id), &PointCloud::labeled(points, labels)?)?;
        let category = id.split('_').next().unwrap_or("mesh").to_string();
        manifest.objects.push(ManifestEntry { id: id.clone(), shape_category: category, is_synthetic: true, tone_scale: tone });
        summary.objects += 1;
        summary.taps += taps.len();
        summary.recordings += recordings.len();
        log::info!("{id}: {} taps, {} recordings", taps.len(), recordings.len());
    }
    ensure!(summary.objects > 0, "no mesh produced any contact");
    manifest.write(&layout.manifest_path())?;
    prov.write(&layout.root, cfg)?;
    Ok(summary)
}

fn load_manifest(layout: &DatasetLayout) -> Result<Manifest> {
    let p = layout.manifest_path();
    if !p.is_file() {
        bail!("no dataset manifest at {}; run `tapsense simulate` first", p.display());
    }
    Ok(layout.load_manifest()?)
}

fn load_records(layout: &DatasetLayout) -> Result<Vec<ObjectRecord>> {
    load_manifest(layout)?
        .active()
        .map(|e| layout.load_object(e).with_context(|| format!("loading object {}", e.id)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractSummary {
    pub spectrograms: usize,
    pub no_strike: usize,
}

/// Detects the strike in every recording and writes its mel spectrogram.
pub fn extract(cfg: &RunConfig) -> Result<ExtractSummary> {
    let exec = exec_for(cfg);
    let layout = DatasetLayout::new(&cfg.data_root);
    let records = load_records(&layout)?;
    let mel = mel_extractor();
    let mut prov = Provenance::new("extract", cfg);
    prov.add_input(&layout.manifest_path())?;
    let mut summary = ExtractSummary { spectrograms: 0, no_strike: 0 };
    for rec in &records {
        prov.add_input(&layout.taps_path(&rec.object_id))?;
        let jobs: Vec<(u32, PathBuf)> = rec.clip_paths.clone();
        if let Some((i, _)) = jobs.first() {
            mkdir(layout.spectrogram_path(&rec.object_id, *i).parent().expect("spectrogram dir"))?;
        }
        let out = exec.map(&jobs, |(i, wav)| -> Result<bool> {
            let w = read_wav(wav)?;
            let target = layout.spectrogram_path(&rec.object_id, *i);
            match detect_strike(&w, STRIKE_WINDOW)? {
                Some(offset) => {
                    write_spectrogram(&target, &mel.extract(&extract_clip(&w, offset)?))?;
                    Ok(true)
                }
                None => {
                    log::warn!("{} tap {i}: no strike detected", rec.object_id);
                    if target.exists() {
                        std::fs::remove_file(&target).with_context(|| format!("removing stale {}", target.display()))?;
                    }
                    Ok(false)
                }
            }
        });
        for r in out {
            if r? {
                summary.spectrograms += 1;
            } else {
                summary.no_strike += 1;
            }
        }
    }
    prov.write(&layout.root, cfg)?;
    Ok(summary)
}

/// Writes the hand-crafted descriptors of every detected strike to `features.csv`.
pub fn features(cfg: &RunConfig) -> Result<usize> {
    let exec = exec_for(cfg);
    let layout = DatasetLayout::new(&cfg.data_root);
    let records = load_records(&layout)?;
    let desc = DescriptorExtractor::new(DescriptorParams::default())?;
    let mut prov = Provenance::new("features", cfg);
    prov.add_input(&layout.manifest_path())?;
    let mut total = 0;
    for rec in &records {
        let clips = exec.map(&rec.clip_paths, |(_, wav)| -> Result<Option<_>> {
            let w = read_wav(wav)?;
            Ok(match detect_strike(&w, STRIKE_WINDOW)? {
                Some(offset) => Some(desc.extract(&extract_clip(&w, offset)?)),
                None => None,
            })
        });
        let rows: Vec<_> = clips.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect();
        write_descriptor_csv(&layout.features_path(&rec.object_id), &rows)?;
        total += rows.len();
    }
    prov.write(&layout.root, cfg)?;
    Ok(total)
}

/// An object's contacts that have a spectrogram, with the spectrogram inputs.
struct Heard {
    taps: Vec<TapRecord>,
    inputs: Vec<Vec<f64>>,
}

fn heard_taps(layout: &DatasetLayout, rec: &ObjectRecord) -> Result<Heard> {
    let mut h = Heard { taps: Vec::new(), inputs: Vec::new() };
    for t in rec.contacts() {
        let p = layout.spectrogram_path(&rec.object_id, t.i);
        if p.is_file() {
            h.taps.push(*t);
            h.inputs.push(read_spectrogram(&p)?.to_input(SpectrogramNorm::Standardize));
        }
    }
    Ok(h)
}

fn heard_all(layout: &DatasetLayout, records: &[ObjectRecord]) -> Result<Vec<Heard>> {
    let heard: Vec<Heard> = records.iter().map(|r| heard_taps(layout, r)).collect::<Result<_>>()?;
    if heard.iter().all(|h| h.taps.is_empty()) {
        bail!("no spectrograms under {}; run `tapsense extract` first", layout.root.display());
    }
    Ok(heard)
}

fn material_items(records: &[ObjectRecord], heard: &[Heard]) -> Result<Vec<SpecItem>> {
    let mut items = Vec::new();
    for (o, (rec, h)) in records.iter().zip(heard).enumerate() {
        let points: Vec<Vec3> = h.taps.iter().map(TapRecord::point).collect();
        let labels = assign_material_labels(&points, &rec.gt_cloud)?;
        for ((p, input), l) in points.into_iter().zip(&h.inputs).zip(labels) {
            items.push(SpecItem { object: o, point: p, input: input.clone(), label: l as usize });
        }
    }
    Ok(items)
}

fn shape_items(records: &[ObjectRecord]) -> Vec<ShapeItem> {
    records
        .iter()
        .enumerate()
        .filter_map(|(o, r)| {
            let contacts: Vec<Vec3> = r.contacts().map(TapRecord::point).collect();
            if contacts.is_empty() {
                log::warn!("{}: no contacts, left out of shape completion", r.object_id);
                return None;
            }
            Some(ShapeItem { object: o, contacts, gt: r.gt_cloud.points.clone(), synthetic: r.is_synthetic })
        })
        .collect()
}

fn reid_objects(heard: &[Heard]) -> Vec<ReidObject> {
    heard
        .iter()
        .map(|h| ReidObject { points: h.taps.iter().map(TapRecord::point).collect(), inputs: h.inputs.clone() })
        .collect()
}

fn subset<T: Clone>(items: &[T], records: &[ObjectRecord], ids: &[String], object_of: impl Fn(&T) -> usize) -> Vec<T> {
    items.iter().filter(|it| ids.contains(&records[object_of(it)].object_id)).cloned().collect()
}

fn split_for(task: Task, ids: &[String], seed: u64) -> Result<SplitSpec> {
    Ok(match task {
        Task::Material => split_material(ids, seed)?,
        _ => split_objects(ids, SHAPE_SPLIT, seed)?,
    })
}

fn modality_stem(m: Modality) -> String {
    format!("model_{}", m.name())
}

/// Trains the configured task and writes checkpoint, metrics, split and provenance.
pub fn train_stage(cfg: &RunConfig) -> Result<PathBuf> {
    let layout = DatasetLayout::new(&cfg.data_root);
    let records = load_records(&layout)?;
    let dir = run_dir(cfg, cfg.task);
    mkdir(&dir)?;
    let tcfg = cfg.train_config(cfg.task)?;
    let ids: Vec<String> = records.iter().map(|r| r.object_id.clone()).collect();
    let mut prov = Provenance::new("train", cfg);
    prov.add_input(&layout.manifest_path())?;
    match cfg.task {
        Task::Material => {
            let items = material_items(&records, &heard_all(&layout, &records)?)?;
            let split = split_for(Task::Material, &ids, cfg.seed)?;
            split.write(&dir.join("split.json"))?;
            let tr = subset(&items, &records, &split.train, |s| s.object);
            let va = subset(&items, &records, &split.val, |s| s.object);
            let (net, out) = train_material(&tr, &va, N_MATERIALS, &tcfg)?;
            checkpoint::save(&net, &dir.join("model.ckpt"), out.best_epoch, out.best_metric, json!({ "n_classes": N_MATERIALS }))?;
            out.write_csv(&dir.join("metrics.csv"))?;
        }
        Task::Shape => {
            let items = shape_items(&records);
            let split = split_for(Task::Shape, &ids, cfg.seed)?;
            split.write(&dir.join("split.json"))?;
            let tr = subset(&items, &records, &split.train, |s| s.object);
            let va = subset(&items, &records, &split.val, |s| s.object);
            let dims = ShapeNetDims::default();
            let (net, out) = train_shape(&tr, &va, dims, &tcfg, &cfg.shape)?;
            checkpoint::save(&net, &dir.join("model.ckpt"), out.best_epoch, out.best_metric, json!({ "dims": dims, "scale": cfg.shape.scale }))?;
            out.write_csv(&dir.join("metrics.csv"))?;
        }
        Task::Reid => {
            let objects = reid_objects(&heard_all(&layout, &records)?);
            let split = reid_split(&objects, cfg.reid.draws_train, cfg.reid.draws_eval, cfg.seed)?;
            let kept: Vec<&str> = split.kept.iter().map(|&o| records[o].object_id.as_str()).collect();
            std::fs::write(dir.join("split.json"), serde_json::to_vec_pretty(&json!({ "seed": cfg.seed, "objects": kept }))?)?;
            for m in Modality::ALL {
                let (net, out) = train_reid(&objects, &split, m, &tcfg)?;
                let stem = modality_stem(m);
                checkpoint::save(&net, &dir.join(format!("{stem}.ckpt")), out.best_epoch, out.best_metric, json!({ "objects": kept }))?;
                out.write_csv(&dir.join(format!("metrics_{}.csv", m.name())))?;
            }
        }
    }
    prov.write(&dir, cfg)?;
    Ok(dir)
}

fn require_trained(dir: &Path, file: &str, task: Task) -> Result<PathBuf> {
    let p = dir.join(file);
    if !p.is_file() {
        bail!("no trained {task} model at {}; run `tapsense train --task {task}` first", p.display());
    }
    Ok(p)
}

fn write_report(cfg: &RunConfig, report: &EvalReport) -> Result<()> {
    report.write(&run_dir(cfg, report.task).join("eval"), "report")?;
    report.write(&reports_dir(cfg), &format!("{}_seed{}", report.task, report.seed))?;
    Ok(())
}

/// Evaluates a trained model against its baselines and writes the report.
pub fn eval_stage(cfg: &RunConfig) -> Result<EvalReport> {
    let exec = exec_for(cfg);
    let layout = DatasetLayout::new(&cfg.data_root);
    let records = load_records(&layout)?;
    let dir = run_dir(cfg, cfg.task);
    let hash = cfg.hash();
    let report = match cfg.task {
        Task::Material => {
            let ckpt = require_trained(&dir, "model.ckpt", Task::Material)?;
            let split = SplitSpec::read(&dir.join("split.json"))?;
            let items = material_items(&records, &heard_all(&layout, &records)?)?;
            let tr = subset(&items, &records, &split.train, |s| s.object);
            let te = subset(&items, &records, &split.test, |s| s.object);
            let mut net = MaterialNet::new(N_MATERIALS, 0.0, 0);
            checkpoint::load_into(&mut net, &ckpt)?;
            let e = eval_material(&net, &te, &tr, &cfg.refine, cfg.seed, cfg.random_trials, exec)?;
            write_predictions(&dir.join("eval").join("predictions.csv"), &records, &te, &e.truth, &e.model)?;
            e.report(cfg.seed, &hash)?
        }
        Task::Shape => {
            let ckpt = require_trained(&dir, "model.ckpt", Task::Shape)?;
            let split = SplitSpec::read(&dir.join("split.json"))?;
            let header = checkpoint::read_header(&ckpt)?;
            let dims: ShapeNetDims = serde_json::from_value(header.extra["dims"].clone())?;
            let scale = header.extra["scale"].as_f64().context("checkpoint lacks the normalization scale")?;
            let mut net = ShapeNet::new(dims, 0);
            checkpoint::load_into(&mut net, &ckpt)?;
            let items = shape_items(&records);
            let tr = subset(&items, &records, &split.train, |s| s.object);
            let te = subset(&items, &records, &split.test, |s| s.object);
            let e = eval_shape(&net, &te, &tr, scale, exec)?;
            let names: Vec<String> = records.iter().map(|r| r.object_id.clone()).collect();
            e.report(cfg.seed, &hash, &names)?
        }
        Task::Reid => {
            let objects = reid_objects(&heard_all(&layout, &records)?);
            let split = reid_split(&objects, cfg.reid.draws_train, cfg.reid.draws_eval, cfg.seed)?;
            let mut acc = Vec::new();
            for m in Modality::ALL {
                let ckpt = require_trained(&dir, &format!("{}.ckpt", modality_stem(m)), Task::Reid)?;
                let mut net = ReidNet::new(split.kept.len(), 0.0, m, 0);
                checkpoint::load_into(&mut net, &ckpt)?;
                acc.push((m, reid_accuracy(&net, &objects, &split.test)?));
            }
            reid_report(&acc, cfg.seed, &hash)?
        }
    };
    write_report(cfg, &report)?;
    let mut prov = Provenance::new("eval", cfg);
    prov.add_input(&layout.manifest_path())?;
    prov.write(&dir.join("eval"), cfg)?;
    Ok(report)
}

const PREDICTION_HEADER: &str = "object_id,tap,x,y,z,truth,pred";

fn write_predictions(path: &Path, records: &[ObjectRecord], items: &[SpecItem], truth: &[usize], pred: &[usize]) -> Result<()> {
    mkdir(path.parent().expect("eval dir"))?;
    let mut s = String::from(PREDICTION_HEADER);
    s.push('\n');
    for (k, it) in items.iter().enumerate() {
        let p = it.point;
        s.push_str(&format!(
            "{},{k},{:?},{:?},{:?},{},{}\n",
            records[it.object].object_id, p.x, p.y, p.z, truth[k], pred[k]
        ));
    }
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

struct Predictions {
    items: Vec<SpecItem>,
    truth: Vec<usize>,
    pred: Vec<usize>,
}

fn read_predictions(path: &Path) -> Result<Predictions> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    ensure!(lines.next() == Some(PREDICTION_HEADER), "{}: unexpected header", path.display());
    let mut objects: Vec<String> = Vec::new();
    let mut out = Predictions { items: Vec::new(), truth: Vec::new(), pred: Vec::new() };
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        ensure!(f.len() == 7, "{}:{}: expected 7 fields", path.display(), n + 2);
        let num = |i: usize| -> Result<f64> { f[i].parse().with_context(|| format!("{}:{}: bad number", path.display(), n + 2)) };
        let object = match objects.iter().position(|o| o == f[0]) {
            Some(i) => i,
            None => {
                objects.push(f[0].to_string());
                objects.len() - 1
            }
        };
        out.items.push(SpecItem { object, point: Vec3::new(num(2)?, num(3)?, num(4)?), input: Vec::new(), label: num(5)? as usize });
        out.truth.push(num(5)? as usize);
        out.pred.push(num(6)? as usize);
    }
    Ok(out)
}

/// Macro F1 of the stored material predictions before and after refinement.
pub fn refine_stage(cfg: &RunConfig) -> Result<(f64, f64)> {
    let dir = run_dir(cfg, Task::Material).join("eval");
    let path = dir.join("predictions.csv");
    if !path.is_file() {
        bail!("no material predictions at {}; run `tapsense eval --task material` first", path.display());
    }
    let p = read_predictions(&path)?;
    let refined = refine_by_object(&p.items, &p.pred, &cfg.refine, exec_for(cfg))?;
    let before = macro_f1(&p.pred, &p.truth, N_MATERIALS)?;
    let after = macro_f1(&refined, &p.truth, N_MATERIALS)?;
    let mut s = String::from("tap,truth,pred,refined\n");
    for k in 0..refined.len() {
        s.push_str(&format!("{k},{},{},{}\n", p.truth[k], p.pred[k], refined[k]));
    }
    std::fs::write(dir.join("refined.csv"), s)?;
    Ok((before, after))
}

/// Mean and standard deviation over seeds of every reported metric.
pub fn report_stage(cfg: &RunConfig) -> Result<Vec<AggregateRow>> {
    let dir = reports_dir(cfg);
    let reports = if dir.is_dir() { read_reports(&dir)? } else { Vec::new() };
    let rows = aggregate(&reports);
    if !rows.is_empty() {
        let mut s = format!("{}\n", AggregateRow::CSV_HEADER);
        for r in &rows {
            s.push_str(&r.to_csv_line());
            s.push('\n');
        }
        std::fs::write(cfg.out.join("summary.csv"), s)?;
    }
    Ok(rows)
}
