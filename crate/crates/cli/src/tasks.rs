//! Training and evaluation of the three tasks on in-memory items. The CLI
//! stages load items from a dataset tree; the acceptance experiments build
//! them directly from simulated objects.

use anyhow::{bail, ensure, Result};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tapsense_core::cloud::PointCloud;
use tapsense_core::dataset::{balance_by_duplication, reid_partition, sample_reid, REID_K};
use tapsense_core::eval::{
    accuracy, confusion, macro_f1, nn_baseline_material, nn_baseline_shape, per_class_f1, random_baseline, EvalReport,
    RandomBaseline, Task,
};
use tapsense_core::exec::Exec;
use tapsense_core::geometry::Vec3;
use tapsense_core::refine::{refine, RefineConfig};
use tapsense_core::shape::{augment_subsample, chamfer, ChamferVariant};
use tapsense_core::Error;
use tapsense_nets::models::{argmax, CloudFrame};
use tapsense_nets::{
    train, EpochSource, Graph, MaterialNet, Modality, Network, Objective, ReidInput, ReidNet, ShapeNet, ShapeNetDims,
    TrainConfig, TrainOutcome,
};

use crate::config::ShapeSettings;

const EVAL_BATCH: usize = 32;

/// One strike: its spectrogram input, contact point and material class.
#[derive(Debug, Clone)]
pub struct SpecItem {
    pub object: usize,
    pub point: Vec3,
    pub input: Vec<f64>,
    pub label: usize,
}

pub fn predict_material(net: &MaterialNet, inputs: &[&[f64]]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(EVAL_BATCH) {
        let mut g = Graph::new(net.store(), false, 0);
        let y = net.forward(&mut g, chunk)?;
        out.extend(g.value(y).data.chunks(net.n_classes).map(argmax));
    }
    Ok(out)
}

/// Trains on class-balanced duplicates of `train_items`, selecting the epoch
/// with the best validation macro F1.
pub fn train_material(
    train_items: &[SpecItem],
    val_items: &[SpecItem],
    n_classes: usize,
    cfg: &TrainConfig,
) -> Result<(MaterialNet, TrainOutcome)> {
    ensure!(!train_items.is_empty() && !val_items.is_empty(), "material training needs train and validation strikes");
    let ids: Vec<usize> = (0..train_items.len()).collect();
    let balanced = balance_by_duplication(&ids, |&i| train_items[i].label, cfg.seed)?;
    let val_inputs: Vec<&[f64]> = val_items.iter().map(|s| s.input.as_slice()).collect();
    let val_truth: Vec<usize> = val_items.iter().map(|s| s.label).collect();
    let mut net = MaterialNet::new(n_classes, cfg.dropout, cfg.seed);
    let outcome = train(
        &mut net,
        EpochSource::Plain(&balanced),
        cfg,
        Objective::Maximize,
        |n, g, batch| {
            let inputs: Vec<&[f64]> = batch.iter().map(|&&i| train_items[i].input.as_slice()).collect();
            let labels: Vec<usize> = batch.iter().map(|&&i| train_items[i].label).collect();
            let y = n.forward(g, &inputs)?;
            g.cross_entropy(y, &labels)
        },
        |n| {
            let pred = predict_material(n, &val_inputs).map_err(|e| Error::invalid(e.to_string()))?;
            macro_f1(&pred, &val_truth, n_classes)
        },
    )?;
    Ok((net, outcome))
}

#[derive(Debug, Clone)]
pub struct MaterialEval {
    pub n_classes: usize,
    pub truth: Vec<usize>,
    pub model: Vec<usize>,
    /// Model predictions after per-object refinement.
    pub refined: Vec<usize>,
    pub nn: Vec<usize>,
    pub random: RandomBaseline,
}

impl MaterialEval {
    pub fn model_f1(&self) -> f64 {
        macro_f1(&self.model, &self.truth, self.n_classes).expect("validated lengths")
    }

    pub fn refined_f1(&self) -> f64 {
        macro_f1(&self.refined, &self.truth, self.n_classes).expect("validated lengths")
    }

    pub fn nn_f1(&self) -> f64 {
        macro_f1(&self.nn, &self.truth, self.n_classes).expect("validated lengths")
    }

    pub fn report(&self, seed: u64, config_hash: &str) -> Result<EvalReport> {
        let mut r = EvalReport::new(Task::Material, seed, config_hash);
        for (method, pred) in [("model", &self.model), ("refined", &self.refined), ("nn", &self.nn)] {
            r.push(method, "macro_f1", macro_f1(pred, &self.truth, self.n_classes)?);
            r.push(method, "accuracy", accuracy(pred, &self.truth)?);
        }
        r.push("random", "macro_f1", self.random.mean);
        r.push("random", "macro_f1_sd", self.random.sd);
        r.push("random", "macro_f1_ci_lo", self.random.ci95.0);
        r.push("random", "macro_f1_ci_hi", self.random.ci95.1);
        let cm = confusion(&self.model, &self.truth, self.n_classes)?;
        r.per_class = per_class_f1(&cm);
        r.confusion = Some(cm);
        r.validate()?;
        Ok(r)
    }
}

/// Refines the predictions of each test object's contacts separately. An
/// object whose predictions have no dominant class keeps them unchanged.
pub fn refine_by_object(items: &[SpecItem], pred: &[usize], cfg: &RefineConfig, exec: Exec) -> Result<Vec<usize>> {
    let mut out = pred.to_vec();
    let mut objects: Vec<usize> = items.iter().map(|s| s.object).collect();
    objects.sort_unstable();
    objects.dedup();
    for o in objects {
        let idx: Vec<usize> = (0..items.len()).filter(|&i| items[i].object == o).collect();
        let points: Vec<Vec3> = idx.iter().map(|&i| items[i].point).collect();
        let labels: Vec<u8> = idx.iter().map(|&i| pred[i] as u8).collect();
        match refine(&points, &labels, cfg, exec) {
            Ok(r) => {
                for (k, &i) in idx.iter().enumerate() {
                    out[i] = r.labels[k] as usize;
                }
            }
            Err(Error::NoDominantClass { .. }) => {
                log::warn!("object {o}: no class reaches the refinement threshold, predictions kept");
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

pub fn eval_material(
    net: &MaterialNet,
    test: &[SpecItem],
    train_items: &[SpecItem],
    refine_cfg: &RefineConfig,
    seed: u64,
    random_trials: usize,
    exec: Exec,
) -> Result<MaterialEval> {
    ensure!(!test.is_empty(), "no test strikes");
    let n_classes = net.n_classes;
    let inputs: Vec<&[f64]> = test.iter().map(|s| s.input.as_slice()).collect();
    let truth: Vec<usize> = test.iter().map(|s| s.label).collect();
    let model = predict_material(net, &inputs)?;
    let refined = refine_by_object(test, &model, refine_cfg, exec)?;
    let test_vecs: Vec<Vec<f64>> = test.iter().map(|s| s.input.clone()).collect();
    let train_vecs: Vec<Vec<f64>> = train_items.iter().map(|s| s.input.clone()).collect();
    let train_labels: Vec<usize> = train_items.iter().map(|s| s.label).collect();
    let nn = nn_baseline_material(&test_vecs, &train_vecs, &train_labels, exec)?;
    let random = random_baseline(n_classes, &truth, seed ^ 0x7a4d, random_trials, |p, t| macro_f1(p, t, n_classes))?;
    Ok(MaterialEval { n_classes, truth, model, refined, nn, random })
}

/// Contacts and ground truth of one object.
#[derive(Debug, Clone)]
pub struct ShapeItem {
    pub object: usize,
    pub contacts: Vec<Vec3>,
    pub gt: Vec<Vec3>,
    pub synthetic: bool,
}

/// A normalized training pair.
struct ShapePair {
    contacts: Vec<Vec3>,
    target: Vec<Vec3>,
}

fn shape_pairs(items: &[ShapeItem], s: &ShapeSettings, seed: u64) -> Result<Vec<(bool, ShapePair)>> {
    let mut out = Vec::new();
    for (n, it) in items.iter().enumerate() {
        let item_seed = seed ^ (n as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let mut variants = vec![it.contacts.clone()];
        if s.augment_copies > 0 && it.contacts.len() >= 10 {
            let cloud = PointCloud::new(it.contacts.clone())?;
            variants.extend(
                augment_subsample(&cloud, s.augment_lo, s.augment_hi, s.augment_copies, item_seed)?
                    .into_iter()
                    .map(|c| c.points),
            );
        }
        let keep = s.loss_points.min(it.gt.len());
        let mut rng = ChaCha8Rng::seed_from_u64(item_seed ^ 0x5a);
        let target: Vec<Vec3> = index::sample(&mut rng, it.gt.len(), keep).into_iter().map(|i| it.gt[i]).collect();
        for v in variants {
            let frame = CloudFrame::fit(&v, s.scale)?;
            out.push((
                it.synthetic,
                ShapePair {
                    contacts: frame.to_local(&v),
                    target: frame.to_local(&target),
                },
            ));
        }
    }
    Ok(out)
}

/// Mean world-frame CD-L1 of the completions of `items`.
pub fn mean_shape_cd(net: &ShapeNet, items: &[ShapeItem], scale: f64) -> Result<f64> {
    let mut sum = 0.0;
    for it in items {
        sum += chamfer(&net.complete_world(&it.contacts, scale)?, &it.gt, ChamferVariant::L1)?;
    }
    Ok(sum / items.len() as f64)
}

/// Trains with the CD-L1 loss on normalized pairs, mixing synthetic and real
/// objects by the blending schedule. Model selection uses the mean CD-L1 on
/// `val_items`.
pub fn train_shape(
    train_items: &[ShapeItem],
    val_items: &[ShapeItem],
    dims: ShapeNetDims,
    cfg: &TrainConfig,
    settings: &ShapeSettings,
) -> Result<(ShapeNet, TrainOutcome)> {
    ensure!(!train_items.is_empty() && !val_items.is_empty(), "shape training needs train and validation objects");
    let pairs = shape_pairs(train_items, settings, cfg.seed)?;
    let (synthetic, real): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|(s, _)| *s);
    let synthetic: Vec<ShapePair> = synthetic.into_iter().map(|(_, p)| p).collect();
    let real: Vec<ShapePair> = real.into_iter().map(|(_, p)| p).collect();
    let mut net = ShapeNet::new(dims, cfg.seed);
    let outcome = train(
        &mut net,
        EpochSource::Blend { synthetic: &synthetic, real: &real },
        cfg,
        Objective::Minimize,
        |n, g, batch| {
            let clouds: Vec<&[Vec3]> = batch.iter().map(|p| p.contacts.as_slice()).collect();
            let targets: Vec<&[Vec3]> = batch.iter().map(|p| p.target.as_slice()).collect();
            let y = n.forward(g, &clouds)?;
            g.chamfer(y, &targets, ChamferVariant::L1)
        },
        |n| mean_shape_cd(n, val_items, settings.scale).map_err(|e| Error::invalid(e.to_string())),
    )?;
    Ok((net, outcome))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeScore {
    pub object: usize,
    pub model: f64,
    pub nn: f64,
    /// Mean CD-L1 to the training ground truths (a uniformly drawn guess).
    pub random: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeEval {
    pub per_object: Vec<ShapeScore>,
}

impl ShapeEval {
    fn mean(&self, f: impl Fn(&ShapeScore) -> f64) -> f64 {
        self.per_object.iter().map(f).sum::<f64>() / self.per_object.len() as f64
    }

    pub fn model_cd(&self) -> f64 {
        self.mean(|s| s.model)
    }

    pub fn nn_cd(&self) -> f64 {
        self.mean(|s| s.nn)
    }

    pub fn random_cd(&self) -> f64 {
        self.mean(|s| s.random)
    }

    pub fn report(&self, seed: u64, config_hash: &str, names: &[String]) -> Result<EvalReport> {
        let mut r = EvalReport::new(Task::Shape, seed, config_hash);
        r.push("model", "cd_l1", self.model_cd());
        r.push("nn", "cd_l1", self.nn_cd());
        r.push("random", "cd_l1", self.random_cd());
        for s in &self.per_object {
            let name = names.get(s.object).cloned().unwrap_or_else(|| s.object.to_string());
            r.push("model", &format!("cd_l1/{name}"), s.model);
            r.push("nn", &format!("cd_l1/{name}"), s.nn);
        }
        r.validate()?;
        Ok(r)
    }
}

pub fn eval_shape(net: &ShapeNet, test: &[ShapeItem], train_items: &[ShapeItem], scale: f64, exec: Exec) -> Result<ShapeEval> {
    ensure!(!test.is_empty() && !train_items.is_empty(), "shape evaluation needs test and training objects");
    let train_taps: Vec<Vec<Vec3>> = train_items.iter().map(|t| t.contacts.clone()).collect();
    let train_gt: Vec<PointCloud> = train_items
        .iter()
        .map(|t| PointCloud::new(t.gt.clone()))
        .collect::<tapsense_core::Result<_>>()?;
    let scores = exec.map(test, |it| -> Result<ShapeScore> {
        let pred = net.complete_world(&it.contacts, scale)?;
        let model = chamfer(&pred, &it.gt, ChamferVariant::L1)?;
        let (_, nn_gt) = nn_baseline_shape(&it.contacts, &train_taps, &train_gt)?;
        let nn = chamfer(&nn_gt.points, &it.gt, ChamferVariant::L1)?;
        let mut random = 0.0;
        for g in &train_gt {
            random += chamfer(&g.points, &it.gt, ChamferVariant::L1)?;
        }
        random /= train_gt.len() as f64;
        Ok(ShapeScore { object: it.object, model, nn, random })
    });
    Ok(ShapeEval { per_object: scores.into_iter().collect::<Result<_>>()? })
}

/// The recorded contacts of one object: points and spectrogram inputs.
#[derive(Debug, Clone, Default)]
pub struct ReidObject {
    pub points: Vec<Vec3>,
    pub inputs: Vec<Vec<f64>>,
}

impl ReidObject {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `REID_K` tap indices of one object; `label` indexes the kept objects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReidSample {
    pub object: usize,
    pub label: usize,
    pub taps: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct ReidSplit {
    /// Indices of the objects with enough taps in every partition.
    pub kept: Vec<usize>,
    pub train: Vec<ReidSample>,
    pub val: Vec<ReidSample>,
    pub test: Vec<ReidSample>,
}

/// Splits each object's taps 60/20/20 and draws `REID_K`-tap samples from each
/// partition. Objects with fewer than `REID_K` taps in some partition are
/// skipped with a warning.
pub fn reid_split(objects: &[ReidObject], draws_train: usize, draws_eval: usize, seed: u64) -> Result<ReidSplit> {
    let mut split = ReidSplit::default();
    for (o, obj) in objects.iter().enumerate() {
        let obj_seed = seed ^ (o as u64 + 1).wrapping_mul(0x2545_f491_4f6c_dd1d);
        let part = reid_partition(obj.len(), obj_seed);
        if [&part.train, &part.val, &part.test].iter().any(|p| p.len() < REID_K) {
            log::warn!("object {o}: {} taps are too few for {REID_K}-tap samples in every partition, skipped", obj.len());
            continue;
        }
        let label = split.kept.len();
        split.kept.push(o);
        let draw = |pool: &[usize], n: usize, s: u64| -> Result<Vec<ReidSample>> {
            Ok(sample_reid(pool, REID_K, n, s)?
                .into_iter()
                .map(|taps| ReidSample { object: o, label, taps })
                .collect())
        };
        split.train.extend(draw(&part.train, draws_train, obj_seed ^ 1)?);
        split.val.extend(draw(&part.val, draws_eval, obj_seed ^ 2)?);
        split.test.extend(draw(&part.test, draws_eval, obj_seed ^ 3)?);
    }
    if split.kept.len() < 2 {
        bail!("re-identification needs at least two objects with enough taps, found {}", split.kept.len());
    }
    Ok(split)
}

fn reid_input<'a>(objects: &'a [ReidObject], s: &ReidSample) -> ReidInput<'a> {
    let obj = &objects[s.object];
    ReidInput {
        specs: s.taps.iter().map(|&t| obj.inputs[t].as_slice()).collect(),
        points: s.taps.iter().map(|&t| obj.points[t]).collect(),
    }
}

pub fn predict_reid(net: &ReidNet, objects: &[ReidObject], samples: &[ReidSample]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let batch: Vec<ReidInput> = chunk.iter().map(|s| reid_input(objects, s)).collect();
        let mut g = Graph::new(net.store(), false, 0);
        let y = net.forward(&mut g, &batch)?;
        out.extend(g.value(y).data.chunks(net.n_objects).map(argmax));
    }
    Ok(out)
}

pub fn reid_accuracy(net: &ReidNet, objects: &[ReidObject], samples: &[ReidSample]) -> Result<f64> {
    let pred = predict_reid(net, objects, samples)?;
    let truth: Vec<usize> = samples.iter().map(|s| s.label).collect();
    Ok(accuracy(&pred, &truth)?)
}

pub fn train_reid(
    objects: &[ReidObject],
    split: &ReidSplit,
    modality: Modality,
    cfg: &TrainConfig,
) -> Result<(ReidNet, TrainOutcome)> {
    let mut net = ReidNet::new(split.kept.len(), cfg.dropout, modality, cfg.seed);
    let outcome = train(
        &mut net,
        EpochSource::Plain(&split.train),
        cfg,
        Objective::Maximize,
        |n, g, batch| {
            let inputs: Vec<ReidInput> = batch.iter().map(|s| reid_input(objects, s)).collect();
            let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
            let y = n.forward(g, &inputs)?;
            g.cross_entropy(y, &labels)
        },
        |n| reid_accuracy(n, objects, &split.val).map_err(|e| Error::invalid(e.to_string())),
    )?;
    Ok((net, outcome))
}

pub fn reid_report(accuracies: &[(Modality, f64)], seed: u64, config_hash: &str) -> Result<EvalReport> {
    let mut r = EvalReport::new(Task::Reid, seed, config_hash);
    for (m, a) in accuracies {
        r.push(m.name(), "accuracy", *a);
    }
    r.validate()?;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reid_split_skips_small_objects_and_relabels() {
        let obj = |n: usize| ReidObject {
            points: vec![Vec3::zeros(); n],
            inputs: vec![vec![0.0]; n],
        };
        let objects = vec![obj(100), obj(30), obj(80)];
        let s = reid_split(&objects, 4, 2, 1).unwrap();
        assert_eq!(s.kept, vec![0, 2]);
        assert_eq!(s.train.len(), 8);
        assert_eq!(s.test.len(), 4);
        assert!(s.test.iter().all(|x| x.taps.len() == REID_K && x.label == (x.object != 0) as usize));
        assert!(reid_split(&objects[1..2], 4, 2, 1).is_err());
    }

    #[test]
    fn refinement_is_per_object() {
        let items: Vec<SpecItem> = (0..20)
            .map(|i| SpecItem {
                object: i / 10,
                point: Vec3::new((i % 10) as f64, 0.0, 0.0),
                input: vec![],
                label: 0,
            })
            .collect();
        // object 0 all class 1 except one stray; object 1 all class 2
        let mut pred = vec![1; 10];
        pred[4] = 3;
        pred.extend(vec![2; 10]);
        let cfg = RefineConfig::new(2, 3, 5).unwrap();
        let out = refine_by_object(&items, &pred, &cfg, Exec::Sequential).unwrap();
        assert_eq!(&out[..10], &[1; 10]);
        assert_eq!(&out[10..], &[2; 10]);
    }
}
