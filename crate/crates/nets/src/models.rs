//! The three perception networks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tapsense_core::geometry::Vec3;
use tapsense_core::{Error, Result};

use crate::graph::{Graph, Var};
use crate::layers::{BatchNorm, Conv2d, Linear};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Side of the square spectrogram input.
pub const SPEC_SIDE: usize = 64;
pub const AUDIO_FEATURES: usize = 150;
pub const REID_TAPS: usize = 15;

/// Common surface used by training, checkpoints and evaluation.
pub trait Network {
    /// Architecture identifier hashed into checkpoints.
    fn arch(&self) -> String;
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
}

/// Spectrogram encoder shared by the material and re-identification nets:
/// 64 → 30 → 15 → 11 → 5 → 1 spatially, 150 features out.
#[derive(Debug, Clone)]
pub struct AudioEncoder {
    pub in_channels: usize,
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    conv3: Conv2d,
    bn3: BatchNorm,
}

/// Spatial size after each stage of [`AudioEncoder`].
pub fn audio_trace(side: usize) -> [usize; 5] {
    let c1 = (side - 6) / 2 + 1;
    let p1 = c1 / 2;
    let c2 = p1 - 5 + 1;
    let p2 = c2 / 2;
    let c3 = p2 - 5 + 1;
    [c1, p1, c2, p2, c3]
}

impl AudioEncoder {
    fn new(store: &mut ParamStore, prefix: &str, in_channels: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            in_channels,
            conv1: Conv2d::new(store, &format!("{prefix}.conv1"), in_channels, 16, 6, 2, rng),
            bn1: BatchNorm::new(store, &format!("{prefix}.bn1"), 16),
            conv2: Conv2d::new(store, &format!("{prefix}.conv2"), 16, 32, 5, 1, rng),
            bn2: BatchNorm::new(store, &format!("{prefix}.bn2"), 32),
            conv3: Conv2d::new(store, &format!("{prefix}.conv3"), 32, AUDIO_FEATURES, 5, 1, rng),
            bn3: BatchNorm::new(store, &format!("{prefix}.bn3"), AUDIO_FEATURES),
        }
    }

    /// `x [B, C, 64, 64]` → `[B, 150]`. `trace` collects the spatial size after each stage.
    fn forward(&self, g: &mut Graph, x: Var, dropout: f64, drop_last: bool, trace: &mut Vec<usize>) -> Result<Var> {
        let b = g.shape(x)[0];
        let h = self.conv1.forward(g, x)?;
        trace.push(g.shape(h)[2]);
        let h = self.bn1.forward_image(g, h)?;
        let h = g.relu(h);
        let h = g.max_pool2(h)?;
        trace.push(g.shape(h)[2]);
        let h = self.conv2.forward(g, h)?;
        trace.push(g.shape(h)[2]);
        let h = self.bn2.forward_image(g, h)?;
        let h = g.dropout(h, dropout)?;
        let h = g.relu(h);
        let h = g.max_pool2(h)?;
        trace.push(g.shape(h)[2]);
        let h = self.conv3.forward(g, h)?;
        trace.push(g.shape(h)[2]);
        let h = self.bn3.forward_image(g, h)?;
        let mut h = g.relu(h);
        if drop_last {
            h = g.dropout(h, dropout)?;
        }
        g.reshape(h, vec![b, AUDIO_FEATURES])
    }
}

fn spectrogram_batch(specs: &[&[f64]], channels: usize) -> Result<Tensor> {
    let per = channels * SPEC_SIDE * SPEC_SIDE;
    let mut data = Vec::with_capacity(specs.len() * per);
    for s in specs {
        if s.len() != per {
            return Err(Error::invalid(format!("expected {per} spectrogram values, got {}", s.len())));
        }
        data.extend_from_slice(s);
    }
    Tensor::new(vec![specs.len(), channels, SPEC_SIDE, SPEC_SIDE], data)
}

#[derive(Debug, Clone)]
pub struct MaterialNet {
    store: ParamStore,
    encoder: AudioEncoder,
    fc1: Linear,
    fc2: Linear,
    pub n_classes: usize,
    pub dropout: f64,
}

impl MaterialNet {
    pub fn new(n_classes: usize, dropout: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = AudioEncoder::new(&mut store, "audio", 1, &mut rng);
        let fc1 = Linear::new(&mut store, "fc1", AUDIO_FEATURES, 70, &mut rng);
        let fc2 = Linear::new(&mut store, "fc2", 70, n_classes, &mut rng);
        Self { store, encoder, fc1, fc2, n_classes, dropout }
    }

    /// Builds `[B, n_classes]` logits for 64x64 spectrograms (band-major).
    pub fn forward(&self, g: &mut Graph, specs: &[&[f64]]) -> Result<Var> {
        self.forward_traced(g, specs, &mut Vec::new())
    }

    pub fn forward_traced(&self, g: &mut Graph, specs: &[&[f64]], trace: &mut Vec<usize>) -> Result<Var> {
        let x = g.input(spectrogram_batch(specs, 1)?);
        let h = self.encoder.forward(g, x, self.dropout, true, trace)?;
        let h = self.fc1.forward(g, h)?;
        let h = g.dropout(h, self.dropout)?;
        self.fc2.forward(g, h)
    }

    /// Evaluation-mode logits for one spectrogram.
    pub fn logits(&self, spec: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store, false, 0);
        let y = self.forward(&mut g, &[spec])?;
        Ok(g.value(y).data.clone())
    }

    pub fn predict(&self, spec: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(spec)?))
    }
}

impl Network for MaterialNet {
    fn arch(&self) -> String {
        format!("material/{}", self.n_classes)
    }
    fn store(&self) -> &ParamStore {
        &self.store
    }
    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Ragged batch of point clouds flattened to `[P, 3]` with segment offsets.
fn point_batch(clouds: &[&[Vec3]]) -> Result<(Tensor, Vec<usize>)> {
    let mut offsets = vec![0];
    let mut data = Vec::new();
    for c in clouds {
        if c.is_empty() {
            return Err(Error::invalid("empty point cloud"));
        }
        for p in c.iter() {
            data.extend_from_slice(&[p.x, p.y, p.z]);
        }
        offsets.push(offsets.last().unwrap() + c.len());
    }
    if clouds.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let n = *offsets.last().unwrap();
    Ok((Tensor::new(vec![n, 3], data)?, offsets))
}

/// Two-stage shared-MLP point encoder with the tiled global feature
/// concatenated between the stages, ending in a global max-pool.
#[derive(Debug, Clone)]
pub struct PointEncoder {
    c1: Linear,
    bn1: BatchNorm,
    c2: Linear,
    c3: Linear,
    bn3: BatchNorm,
    c4: Linear,
}

impl PointEncoder {
    fn new(store: &mut ParamStore, prefix: &str, widths: [usize; 4], rng: &mut ChaCha8Rng) -> Self {
        let [a, b, c, d] = widths;
        Self {
            c1: Linear::new(store, &format!("{prefix}.conv1"), 3, a, rng),
            bn1: BatchNorm::new(store, &format!("{prefix}.bn1"), a),
            c2: Linear::new(store, &format!("{prefix}.conv2"), a, b, rng),
            c3: Linear::new(store, &format!("{prefix}.conv3"), 2 * b, c, rng),
            bn3: BatchNorm::new(store, &format!("{prefix}.bn3"), c),
            c4: Linear::new(store, &format!("{prefix}.conv4"), c, d, rng),
        }
    }

    fn forward(&self, g: &mut Graph, clouds: &[&[Vec3]]) -> Result<Var> {
        let (t, offsets) = point_batch(clouds)?;
        let n = clouds.len();
        let x = g.input(t);
        let h = self.c1.forward(g, x)?;
        let h = self.bn1.forward_points(g, h, n)?;
        let h = g.relu(h);
        let f = self.c2.forward(g, h)?;
        let global = g.segment_max(f, &offsets)?;
        let h = g.tile_concat(f, global, &offsets)?;
        let h = self.c3.forward(g, h)?;
        let h = self.bn3.forward_points(g, h, n)?;
        let h = g.relu(h);
        let h = self.c4.forward(g, h)?;
        g.segment_max(h, &offsets)
    }
}

/// Contact-cloud normalization applied before [`ShapeNet`]: translate to the
/// centroid, then divide by a fixed scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudFrame {
    pub center: [f64; 3],
    pub scale: f64,
}

impl CloudFrame {
    pub fn fit(points: &[Vec3], scale: f64) -> Result<Self> {
        if points.is_empty() || !(scale > 0.0) {
            return Err(Error::invalid("normalization needs points and a positive scale"));
        }
        let c = points.iter().fold(Vec3::zeros(), |a, p| a + p) / points.len() as f64;
        Ok(Self { center: [c.x, c.y, c.z], scale })
    }

    fn c(&self) -> Vec3 {
        Vec3::new(self.center[0], self.center[1], self.center[2])
    }

    pub fn to_local(&self, p: &[Vec3]) -> Vec<Vec3> {
        p.iter().map(|q| (q - self.c()) / self.scale).collect()
    }

    pub fn to_world(&self, p: &[Vec3]) -> Vec<Vec3> {
        p.iter().map(|q| q * self.scale + self.c()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeNetDims {
    pub encoder: [usize; 4],
    pub hidden: usize,
    pub n_out: usize,
}

impl Default for ShapeNetDims {
    fn default() -> Self {
        Self { encoder: [128, 256, 512, 1024], hidden: 1024, n_out: 2000 }
    }
}

#[derive(Debug, Clone)]
pub struct ShapeNet {
    store: ParamStore,
    encoder: PointEncoder,
    fc1: Linear,
    fc2: Linear,
    fc3: Linear,
    pub dims: ShapeNetDims,
}

impl ShapeNet {
    pub fn new(dims: ShapeNetDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = PointEncoder::new(&mut store, "points", dims.encoder, &mut rng);
        let fc1 = Linear::new(&mut store, "fc1", dims.encoder[3], dims.hidden, &mut rng);
        let fc2 = Linear::new(&mut store, "fc2", dims.hidden, dims.hidden, &mut rng);
        let fc3 = Linear::new(&mut store, "fc3", dims.hidden, 3 * dims.n_out, &mut rng);
        Self { store, encoder, fc1, fc2, fc3, dims }
    }

    /// `[B, 3 * n_out]` coordinates for a batch of (normalized) contact clouds.
    pub fn forward(&self, g: &mut Graph, clouds: &[&[Vec3]]) -> Result<Var> {
        let h = self.encoder.forward(g, clouds)?;
        let h = self.fc1.forward(g, h)?;
        let h = g.relu(h);
        let h = self.fc2.forward(g, h)?;
        let h = g.relu(h);
        self.fc3.forward(g, h)
    }

    /// Global feature of one cloud, evaluation mode.
    pub fn global_feature(&self, cloud: &[Vec3]) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store, false, 0);
        let v = self.encoder.forward(&mut g, &[cloud])?;
        Ok(g.value(v).data.clone())
    }

    /// Evaluation-mode completion of one cloud in the network's own frame.
    pub fn complete(&self, cloud: &[Vec3]) -> Result<Vec<Vec3>> {
        let mut g = Graph::new(&self.store, false, 0);
        let v = self.forward(&mut g, &[cloud])?;
        Ok(g.value(v).data.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
    }

    /// Normalizes world-frame contacts, completes them and maps the result back.
    pub fn complete_world(&self, contacts: &[Vec3], scale: f64) -> Result<Vec<Vec3>> {
        let frame = CloudFrame::fit(contacts, scale)?;
        Ok(frame.to_world(&self.complete(&frame.to_local(contacts))?))
    }
}

impl Network for ShapeNet {
    fn arch(&self) -> String {
        let d = &self.dims;
        format!("shape/{:?}/{}/{}", d.encoder, d.hidden, d.n_out)
    }
    fn store(&self) -> &ParamStore {
        &self.store
    }
    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

/// Which inputs reach the fusion layers; the removed half is zero-filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Both,
    AudioOnly,
    PointsOnly,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Both, Modality::AudioOnly, Modality::PointsOnly];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Both => "fused",
            Modality::AudioOnly => "audio-only",
            Modality::PointsOnly => "points-only",
        }
    }
}

/// One re-identification sample: 15 spectrograms and their 15 contact points.
#[derive(Debug, Clone)]
pub struct ReidInput<'a> {
    pub specs: Vec<&'a [f64]>,
    pub points: Vec<Vec3>,
}

#[derive(Debug, Clone)]
pub struct ReidNet {
    store: ParamStore,
    audio: AudioEncoder,
    points: PointEncoder,
    fc1: Linear,
    fc2: Linear,
    fc3: Linear,
    pub n_objects: usize,
    pub dropout: f64,
    pub modality: Modality,
}

impl ReidNet {
    pub fn new(n_objects: usize, dropout: f64, modality: Modality, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let audio = AudioEncoder::new(&mut store, "audio", REID_TAPS, &mut rng);
        let points = PointEncoder::new(&mut store, "points", [64, 64, 128, AUDIO_FEATURES], &mut rng);
        let fc1 = Linear::new(&mut store, "fc1", 2 * AUDIO_FEATURES, 170, &mut rng);
        let fc2 = Linear::new(&mut store, "fc2", 170, 170, &mut rng);
        let fc3 = Linear::new(&mut store, "fc3", 170, n_objects, &mut rng);
        Self { store, audio, points, fc1, fc2, fc3, n_objects, dropout, modality }
    }

    pub fn forward(&self, g: &mut Graph, batch: &[ReidInput]) -> Result<Var> {
        let n = batch.len();
        for s in batch {
            if s.specs.len() != REID_TAPS || s.points.len() != REID_TAPS {
                return Err(Error::invalid(format!(
                    "re-identification needs {REID_TAPS} spectrograms and points, got {} and {}",
                    s.specs.len(),
                    s.points.len()
                )));
            }
        }
        let zeros = |g: &mut Graph| g.input(Tensor::zeros(vec![n, AUDIO_FEATURES]));
        let a = if self.modality == Modality::PointsOnly {
            zeros(g)
        } else {
            let specs: Vec<&[f64]> = batch.iter().flat_map(|s| s.specs.iter().copied()).collect();
            let x = g.input(spectrogram_batch(&specs, 1)?);
            let x = g.reshape(x, vec![n, REID_TAPS, SPEC_SIDE, SPEC_SIDE])?;
            self.audio.forward(g, x, self.dropout, false, &mut Vec::new())?
        };
        let c = if self.modality == Modality::AudioOnly {
            zeros(g)
        } else {
            let clouds: Vec<&[Vec3]> = batch.iter().map(|s| s.points.as_slice()).collect();
            self.points.forward(g, &clouds)?
        };
        let h = g.concat(a, c)?;
        let h = g.dropout(h, self.dropout)?;
        let h = self.fc1.forward(g, h)?;
        let h = g.dropout(h, self.dropout)?;
        let h = self.fc2.forward(g, h)?;
        let h = g.dropout(h, self.dropout)?;
        self.fc3.forward(g, h)
    }

    pub fn logits(&self, sample: &ReidInput) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store, false, 0);
        let y = self.forward(&mut g, std::slice::from_ref(sample))?;
        Ok(g.value(y).data.clone())
    }

    pub fn predict(&self, sample: &ReidInput) -> Result<usize> {
        Ok(argmax(&self.logits(sample)?))
    }
}

impl Network for ReidNet {
    fn arch(&self) -> String {
        format!("reid/{}/{}", self.n_objects, self.modality.name())
    }
    fn store(&self) -> &ParamStore {
        &self.store
    }
    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}
