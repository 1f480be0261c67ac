//! Modal impact synthesis: each tap is a sum of exponentially damped
//! sinusoids on top of a periodic motor hum.
//!
//! The hum repeats every `STRIKE_WINDOW` samples, so every window of a
//! strike-free recording has exactly the same mean magnitude and the onset
//! detector cannot fire on noise alone.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{Waveform, CLIP_LEN, SAMPLE_RATE, STRIKE_WINDOW};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::kv::KeyValues;
use crate::sim::{SimObject, TapRecord};
use crate::material::Material;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub freq: f64,
    pub damping: f64,
    pub amp: f64,
}

impl Mode {
    pub const fn new(freq: f64, damping: f64, amp: f64) -> Self {
        Self { freq, damping, amp }
    }

    /// Continuous-time energy of `amp·e^{-d t}·sin(ωt)` over `t ≥ 0`.
    pub fn energy(&self) -> f64 {
        let w = 2.0 * PI * self.freq;
        let d = self.damping;
        self.amp * self.amp * w * w / (4.0 * d * (d * d + w * w))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialModel {
    pub material: Material,
    pub modes: Vec<Mode>,
    /// Hum level the mode amplitudes were tuned against.
    pub noise_floor: f64,
    /// Frequencies scale with the square root of this factor.
    pub stiffness_scale: f64,
}

impl MaterialModel {
    pub fn validate(&self) -> Result<()> {
        let nyq = SAMPLE_RATE as f64 / 2.0;
        for (i, m) in self.modes.iter().enumerate() {
            if !(m.freq > 0.0 && m.freq * self.stiffness_scale.sqrt() < nyq) {
                return Err(Error::invalid(format!("{}: mode {i} frequency {} Hz out of range", self.material, m.freq)));
            }
            if !(m.damping > 0.0 && m.damping.is_finite()) {
                return Err(Error::invalid(format!("{}: mode {i} damping must be positive", self.material)));
            }
            if !(m.amp >= 0.0 && m.amp.is_finite()) {
                return Err(Error::invalid(format!("{}: mode {i} amplitude must be nonnegative", self.material)));
            }
        }
        if !(self.noise_floor >= 0.0 && self.stiffness_scale > 0.0) {
            return Err(Error::invalid(format!("{}: bad noise floor or stiffness", self.material)));
        }
        Ok(())
    }

    pub fn amplitude_sum(&self) -> f64 {
        self.modes.iter().map(|m| m.amp).sum()
    }

    /// Built-in model. These tables are synthetic: glass and ceramic share
    /// overlapping bands on purpose, and foam/fabric stay under the hum.
    pub fn default_for(material: Material) -> Self {
        use Material::*;
        let modes: &[(f64, f64, f64)] = match material {
            Plastic => &[(600.0, 50.0, 0.25), (1600.0, 70.0, 0.15), (3000.0, 90.0, 0.08), (4800.0, 120.0, 0.04)],
            Glass => &[(1800.0, 9.0, 0.22), (3400.0, 12.0, 0.14), (5200.0, 16.0, 0.08), (7600.0, 20.0, 0.05)],
            Wood => &[(300.0, 45.0, 0.30), (780.0, 60.0, 0.18), (1500.0, 90.0, 0.09)],
            Metal => &[(2600.0, 6.0, 0.25), (4100.0, 7.0, 0.18), (6300.0, 8.0, 0.12), (9800.0, 10.0, 0.08), (12500.0, 12.0, 0.05)],
            Ceramic => &[(1700.0, 14.0, 0.22), (3300.0, 18.0, 0.15), (4900.0, 24.0, 0.09), (6900.0, 30.0, 0.05)],
            Paper => &[(180.0, 140.0, 0.15), (520.0, 170.0, 0.08), (1400.0, 220.0, 0.04), (2600.0, 260.0, 0.02)],
            Rubber => &[(110.0, 80.0, 0.20), (260.0, 100.0, 0.10), (520.0, 140.0, 0.05)],
            Foam => &[(90.0, 30.0, 0.004), (210.0, 35.0, 0.0025), (400.0, 40.0, 0.0015)],
            Fabric => &[(650.0, 20.0, 0.0035), (1500.0, 25.0, 0.0025), (2700.0, 30.0, 0.0015)],
        };
        Self {
            material,
            modes: modes.iter().map(|&(f, d, a)| Mode::new(f, d, a)).collect(),
            noise_floor: DEFAULT_MOTOR_NOISE,
            stiffness_scale: 1.0,
        }
    }
}

pub const DEFAULT_MOTOR_NOISE: f64 = 0.01;

/// One model per material, indexed by class id.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialTable(Vec<MaterialModel>);

impl Default for MaterialTable {
    fn default() -> Self {
        Self(Material::ALL.into_iter().map(MaterialModel::default_for).collect())
    }
}

impl MaterialTable {
    pub fn get(&self, m: Material) -> &MaterialModel {
        &self.0[m.id() as usize]
    }

    pub fn set(&mut self, model: MaterialModel) -> Result<()> {
        model.validate()?;
        let i = model.material.id() as usize;
        self.0[i] = model;
        Ok(())
    }

    /// Overrides defaults from keys `<name>.modes = f:d:a, f:d:a, ...`,
    /// `<name>.noise_floor` and `<name>.stiffness_scale`.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut allowed = Vec::new();
        for m in Material::ALL {
            for k in ["modes", "noise_floor", "stiffness_scale"] {
                allowed.push(format!("{}.{k}", m.name()));
            }
        }
        kv.reject_unknown(&allowed.iter().map(String::as_str).collect::<Vec<_>>())?;
        let mut table = Self::default();
        for m in Material::ALL {
            let mut model = table.get(m).clone();
            if let Some(raw) = kv.raw(&format!("{}.modes", m.name())) {
                model.modes = parse_modes(raw).map_err(|e| Error::invalid(format!("{}.modes: {e}", m.name())))?;
            }
            if let Some(v) = kv.get(&format!("{}.noise_floor", m.name()))? {
                model.noise_floor = v;
            }
            if let Some(v) = kv.get(&format!("{}.stiffness_scale", m.name()))? {
                model.stiffness_scale = v;
            }
            table.set(model)?;
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&KeyValues::read(path)?)
    }

    pub fn models(&self) -> &[MaterialModel] {
        &self.0
    }
}

fn parse_modes(raw: &str) -> std::result::Result<Vec<Mode>, String> {
    let modes = raw
        .split(',')
        .map(|t| {
            let p: Vec<f64> = t
                .split(':')
                .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
                .collect::<std::result::Result<_, _>>()?;
            match p[..] {
                [f, d, a] => Ok(Mode::new(f, d, a)),
                _ => Err(format!("{t:?}: expected freq:damping:amp")),
            }
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if !(3..=6).contains(&modes.len()) {
        return Err(format!("{} modes given, expected 3 to 6", modes.len()));
    }
    Ok(modes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Recording length in seconds.
    pub duration: f64,
    pub seed: u64,
    /// Peak amplitude of the motor hum.
    pub motor_noise_level: f64,
    /// Bound on the per-contact multiplicative frequency jitter.
    pub freq_jitter: f64,
    /// Bound on the per-contact multiplicative amplitude jitter (tap force).
    pub amp_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            duration: 5.0,
            seed: 0,
            motor_noise_level: DEFAULT_MOTOR_NOISE,
            freq_jitter: 0.02,
            amp_jitter: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn n_samples(&self) -> usize {
        (self.duration * SAMPLE_RATE as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration >= 0.5) || self.n_samples() < CLIP_LEN + 3 * STRIKE_WINDOW {
            return Err(Error::invalid(format!("duration {} s too short", self.duration)));
        }
        if !(self.motor_noise_level >= 0.0 && self.motor_noise_level < 1.0) {
            return Err(Error::invalid("motor noise level must be in [0, 1)"));
        }
        if !(0.0..=0.03).contains(&self.freq_jitter) {
            return Err(Error::invalid("frequency jitter must be within 3%"));
        }
        if !(0.0..1.0).contains(&self.amp_jitter) {
            return Err(Error::invalid("amplitude jitter must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Harmonics of the 44.1 Hz hum fundamental (one period per strike window).
const HUM_HARMONICS: [usize; 7] = [2, 3, 5, 7, 11, 17, 23];

/// One period of the motor hum with random phases, scaled to `level` peak.
pub fn motor_hum_period(level: f64, rng: &mut impl Rng) -> Vec<f64> {
    let n = STRIKE_WINDOW;
    let parts: Vec<(f64, f64, f64)> = HUM_HARMONICS
        .iter()
        .map(|&k| {
            (k as f64, 1.0 / (k as f64).sqrt(), rng.random_range(0.0..2.0 * PI))
        })
        .collect();
    let mut table: Vec<f64> = (0..n)
        .map(|i| {
            parts
                .iter()
                .map(|(k, a, ph)| a * (2.0 * PI * k * i as f64 / n as f64 + ph).sin())
                .sum()
        })
        .collect();
    let peak = table.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        table.iter_mut().for_each(|v| *v *= level / peak);
    }
    table
}

/// Mode set actually rendered for one contact.
fn render(modes: &[Mode], hum: &[f64], n: usize, start: usize) -> Result<Waveform> {
    let dt = 1.0 / SAMPLE_RATE as f64;
    Waveform::from_clamped((0..n).map(|i| {
        let mut v = if hum.is_empty() { 0.0 } else { hum[i % hum.len()] };
        if i >= start {
            let t = (i - start) as f64 * dt;
            let s: f64 = modes
                .iter()
                .map(|m| m.amp * (-m.damping * t).exp() * (2.0 * PI * m.freq * t).sin())
                .sum();
            v += s;
        }
        v as f32
    }))
}

fn effective_modes(model: &MaterialModel, tone: f64, jitter: Option<(&mut ChaCha8Rng, &SynthConfig)>) -> Vec<Mode> {
    let fscale = model.stiffness_scale.sqrt() * tone;
    let nyq = SAMPLE_RATE as f64 / 2.0;
    match jitter {
        None => model
            .modes
            .iter()
            .map(|m| Mode::new((m.freq * fscale).min(nyq * 0.99), m.damping, m.amp))
            .collect(),
        Some((rng, cfg)) => {
            let force = 1.0 + rng.random_range(-1.0..=1.0) * cfg.amp_jitter;
            model
                .modes
                .iter()
                .map(|m| {
                    let j = 1.0 + rng.random_range(-1.0..=1.0) * cfg.freq_jitter;
                    Mode::new((m.freq * fscale * j).min(nyq * 0.99), m.damping, m.amp * force)
                })
                .collect()
        }
    }
}

fn strike_sample(cfg: &SynthConfig, strike_time: f64) -> Result<usize> {
    cfg.validate()?;
    let clip_s = CLIP_LEN as f64 / SAMPLE_RATE as f64;
    if !(strike_time >= 0.0) || strike_time + clip_s > cfg.duration + 1e-12 {
        return Err(Error::invalid(format!(
            "strike at {strike_time} s leaves less than one clip before the {} s end",
            cfg.duration
        )));
    }
    Ok((strike_time * SAMPLE_RATE as f64).round() as usize)
}

/// Renders the exact model (no jitter) struck at `strike_time`.
pub fn synth_impact(model: &MaterialModel, cfg: &SynthConfig, strike_time: f64) -> Result<Waveform> {
    model.validate()?;
    let start = strike_sample(cfg, strike_time)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let hum = motor_hum_period(cfg.motor_noise_level, &mut rng);
    render(&effective_modes(model, 1.0, None), &hum, cfg.n_samples(), start)
}

/// One jittered contact: frequencies scaled by `tone`, then by a random
/// factor within `cfg.freq_jitter`. `stream` selects an independent RNG stream.
pub fn synth_contact(model: &MaterialModel, cfg: &SynthConfig, strike_time: f64, tone: f64, stream: u64) -> Result<Waveform> {
    model.validate()?;
    if !(tone > 0.0 && tone.is_finite()) {
        return Err(Error::invalid("tone scale must be positive"));
    }
    let start = strike_sample(cfg, strike_time)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let hum = motor_hum_period(cfg.motor_noise_level, &mut rng);
    let modes = effective_modes(model, tone, Some((&mut rng, cfg)));
    render(&modes, &hum, cfg.n_samples(), start)
}

/// Strikes land at a random time inside this window of the recording.
const STRIKE_WINDOW_S: (f64, f64) = (0.5, 2.5);

/// One recording per contact record, using the material of the face nearest
/// the contact point and the object's tone scale. The `a` flag is set when
/// the recording peaks above twice the hum level. Records without voltage
/// contact are skipped.
pub fn synth_for_taps(
    records: &[TapRecord],
    obj: &SimObject,
    table: &MaterialTable,
    cfg: &SynthConfig,
    exec: Exec,
) -> Result<Vec<(TapRecord, Waveform)>> {
    cfg.validate()?;
    let latest = cfg.duration - CLIP_LEN as f64 / SAMPLE_RATE as f64;
    let window = (STRIKE_WINDOW_S.0.min(latest), STRIKE_WINDOW_S.1.min(latest));
    let valid: Vec<&TapRecord> = records
        .iter()
        .filter(|r| {
            if !r.v {
                log::info!("synth: skipping tap {} without voltage contact", r.i);
            }
            r.v
        })
        .collect();
    let out = exec.map(&valid, |r| -> Result<(TapRecord, Waveform)> {
        let material = obj.material_at(&r.point());
        let stream = r.i as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_7a95);
        rng.set_stream(stream);
        let t = if window.1 > window.0 { rng.random_range(window.0..window.1) } else { window.0 };
        let w = synth_contact(table.get(material), cfg, t, obj.tone_scale, stream)?;
        let peak = w.samples().iter().fold(0.0f32, |m, s| m.max(s.abs())) as f64;
        let mut rec = **r;
        rec.a = peak > 2.0 * cfg.motor_noise_level;
        Ok((rec, w))
    });
    out.into_iter().collect()
}
