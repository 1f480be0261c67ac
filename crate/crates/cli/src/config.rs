//! Run configuration: a key=value file merged with command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tapsense_core::eval::Task;
use tapsense_core::kv::KeyValues;
use tapsense_core::refine::RefineConfig;
use tapsense_core::sim::PolicyConfig;
use tapsense_core::synth::SynthConfig;
use tapsense_nets::{OptimizerKind, StepDecay, TrainConfig};

pub const DATA_ROOT_ENV: &str = "SONIC_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSettings {
    /// Fixed scale dividing centred contact clouds before completion.
    pub scale: f64,
    /// Ground-truth points kept for the training loss.
    pub loss_points: usize,
    pub augment_copies: usize,
    pub augment_lo: f64,
    pub augment_hi: f64,
}

impl Default for ShapeSettings {
    fn default() -> Self {
        Self {
            scale: 0.15,
            loss_points: 2000,
            augment_copies: 4,
            augment_lo: 0.8,
            augment_hi: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReidSettings {
    pub draws_train: usize,
    pub draws_eval: usize,
}

impl Default for ReidSettings {
    fn default() -> Self {
        Self {
            draws_train: tapsense_core::dataset::REID_DRAWS_TRAIN,
            draws_eval: tapsense_core::dataset::REID_DRAWS_EVAL,
        }
    }
}

/// Overrides applied on top of the per-task training preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainOverrides {
    pub optimizer: Option<String>,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub decay_factor: Option<f64>,
    pub decay_period: Option<usize>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub dropout: Option<f64>,
}

impl TrainOverrides {
    fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(&[
            "optimizer",
            "lr",
            "momentum",
            "decay_factor",
            "decay_period",
            "batch_size",
            "epochs",
            "dropout",
        ])?;
        Ok(Self {
            optimizer: kv.get("optimizer")?,
            lr: kv.get("lr")?,
            momentum: kv.get("momentum")?,
            decay_factor: kv.get("decay_factor")?,
            decay_period: kv.get("decay_period")?,
            batch_size: kv.get("batch_size")?,
            epochs: kv.get("epochs")?,
            dropout: kv.get("dropout")?,
        })
    }

    pub fn apply(&self, mut c: TrainConfig) -> Result<TrainConfig> {
        if let Some(o) = &self.optimizer {
            c.optimizer = match o.as_str() {
                "sgd" => OptimizerKind::sgd(),
                "adam" => OptimizerKind::adam(),
                _ => bail!("unknown optimizer {o:?} (expected sgd or adam)"),
            };
        }
        if let (Some(m), OptimizerKind::Sgd { momentum }) = (self.momentum, &mut c.optimizer) {
            *momentum = m;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        match (self.decay_factor, self.decay_period) {
            (Some(factor), Some(period)) => c.decay = Some(StepDecay { factor, period }),
            (Some(factor), None) => c.decay = c.decay.map(|d| StepDecay { factor, ..d }),
            (None, Some(period)) => c.decay = c.decay.map(|d| StepDecay { period, ..d }),
            (None, None) => {}
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.epochs {
            c.max_epochs = v;
        }
        if let Some(v) = self.dropout {
            c.dropout = v;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Values given on the command line; each wins over the file.
#[derive(Debug, Clone, Default)]
pub struct CliOverrides {
    pub data_root: Option<PathBuf>,
    pub mesh_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub task: Option<Task>,
    pub jobs: Option<usize>,
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data_root: PathBuf,
    pub mesh_dir: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub task: Task,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub policy: PolicyConfig,
    pub synth: SynthConfig,
    /// Optional material table file; the built-in table otherwise.
    pub materials: Option<PathBuf>,
    pub refine: RefineConfig,
    pub shape: ShapeSettings,
    pub reid: ReidSettings,
    pub train: TrainOverrides,
    pub random_trials: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_root: PathBuf::from("data"),
            mesh_dir: PathBuf::from("meshes"),
            out: PathBuf::from("runs"),
            seed: 0,
            task: Task::Material,
            jobs: 0,
            policy: PolicyConfig::default(),
            synth: SynthConfig::default(),
            materials: None,
            refine: RefineConfig { m: 8, k: 3, n: 25 },
            shape: ShapeSettings::default(),
            reid: ReidSettings::default(),
            train: TrainOverrides::default(),
            random_trials: 1000,
        }
    }
}

const TOP_KEYS: [&str; 8] = ["data_root", "mesh_dir", "out", "seed", "task", "jobs", "materials", "random_trials"];
const SECTIONS: [&str; 6] = ["policy", "synth", "refine", "shape", "reid", "train"];

impl RunConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut c = Self::default();
        for key in kv.keys() {
            let known = TOP_KEYS.contains(&key)
                || key.split_once('.').is_some_and(|(s, _)| SECTIONS.contains(&s));
            if !known {
                bail!("unknown configuration key {key:?}");
            }
        }
        if let Some(v) = kv.get::<String>("data_root")? {
            c.data_root = v.into();
        }
        if let Some(v) = kv.get::<String>("mesh_dir")? {
            c.mesh_dir = v.into();
        }
        if let Some(v) = kv.get::<String>("out")? {
            c.out = v.into();
        }
        if let Some(v) = kv.get::<String>("materials")? {
            c.materials = Some(v.into());
        }
        if let Some(v) = kv.get("seed")? {
            c.seed = v;
        }
        if let Some(v) = kv.get("task")? {
            c.task = v;
        }
        if let Some(v) = kv.get("jobs")? {
            c.jobs = v;
        }
        if let Some(v) = kv.get("random_trials")? {
            c.random_trials = v;
        }
        c.policy = PolicyConfig::from_kv(&kv.section("policy"))?;
        c.synth = synth_from_kv(&kv.section("synth"))?;
        let r = kv.section("refine");
        r.reject_unknown(&["m", "k", "n"])?;
        c.refine = RefineConfig::new(
            r.get("m")?.unwrap_or(c.refine.m),
            r.get("k")?.unwrap_or(c.refine.k),
            r.get("n")?.unwrap_or(c.refine.n),
        )?;
        let s = kv.section("shape");
        s.reject_unknown(&["scale", "loss_points", "augment_copies", "augment_lo", "augment_hi"])?;
        let d = &mut c.shape;
        d.scale = s.get("scale")?.unwrap_or(d.scale);
        d.loss_points = s.get("loss_points")?.unwrap_or(d.loss_points);
        d.augment_copies = s.get("augment_copies")?.unwrap_or(d.augment_copies);
        d.augment_lo = s.get("augment_lo")?.unwrap_or(d.augment_lo);
        d.augment_hi = s.get("augment_hi")?.unwrap_or(d.augment_hi);
        let q = kv.section("reid");
        q.reject_unknown(&["draws_train", "draws_eval"])?;
        c.reid.draws_train = q.get("draws_train")?.unwrap_or(c.reid.draws_train);
        c.reid.draws_eval = q.get("draws_eval")?.unwrap_or(c.reid.draws_eval);
        c.train = TrainOverrides::from_kv(&kv.section("train"))?;
        Ok(c)
    }

    /// Defaults, then the file (if any), then the environment and flags.
    pub fn load(file: Option<&Path>, cli: &CliOverrides) -> Result<Self> {
        let mut c = match file {
            Some(p) => Self::from_kv(&KeyValues::read(p)?).with_context(|| format!("config {}", p.display()))?,
            None => Self::default(),
        };
        let root_in_file = file.is_some_and(|p| KeyValues::read(p).map(|kv| kv.raw("data_root").is_some()).unwrap_or(false));
        if !root_in_file {
            if let Some(v) = std::env::var_os(DATA_ROOT_ENV) {
                c.data_root = v.into();
            }
        }
        if let Some(v) = &cli.data_root {
            c.data_root = v.clone();
        }
        if let Some(v) = &cli.mesh_dir {
            c.mesh_dir = v.clone();
        }
        if let Some(v) = &cli.out {
            c.out = v.clone();
        }
        if let Some(v) = cli.seed {
            c.seed = v;
        }
        if let Some(v) = cli.task {
            c.task = v;
        }
        if let Some(v) = cli.jobs {
            c.jobs = v;
        }
        if let Some(v) = cli.epochs {
            c.train.epochs = Some(v);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        self.synth.validate()?;
        self.refine.validate()?;
        self.train_config(self.task)?;
        let s = &self.shape;
        if !(s.scale > 0.0) || s.loss_points == 0 || !(0.0 < s.augment_lo && s.augment_lo <= s.augment_hi && s.augment_hi <= 1.0) {
            bail!("invalid shape settings {s:?}");
        }
        if self.reid.draws_train == 0 || self.reid.draws_eval == 0 {
            bail!("re-identification draw counts must be positive");
        }
        if self.random_trials < 100 {
            bail!("random_trials must be at least 100");
        }
        Ok(())
    }

    /// The task's preset with the `train.*` overrides applied and the run seed.
    pub fn train_config(&self, task: Task) -> Result<TrainConfig> {
        let preset = match task {
            Task::Material => TrainConfig::material(),
            Task::Shape => TrainConfig::shape(),
            Task::Reid => TrainConfig::reid(),
        };
        let mut c = self.train.apply(preset)?;
        c.seed = self.seed;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_json().as_bytes()))
    }
}

fn synth_from_kv(kv: &KeyValues) -> Result<SynthConfig> {
    kv.reject_unknown(&["duration", "seed", "motor_noise_level", "freq_jitter", "amp_jitter"])?;
    let mut c = SynthConfig::default();
    c.duration = kv.get("duration")?.unwrap_or(c.duration);
    c.seed = kv.get("seed")?.unwrap_or(c.seed);
    c.motor_noise_level = kv.get("motor_noise_level")?.unwrap_or(c.motor_noise_level);
    c.freq_jitter = kv.get("freq_jitter")?.unwrap_or(c.freq_jitter);
    c.amp_jitter = kv.get("amp_jitter")?.unwrap_or(c.amp_jitter);
    c.validate()?;
    Ok(c)
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
