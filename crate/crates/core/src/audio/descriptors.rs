//! The twelve scalar descriptors. Vector-valued features are averaged over
//! both frames and coefficients.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::mel::MelFilterbank;
use super::stft::{hann, Stft};
use super::{StrikeClip, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::exec::Exec;

pub const DESCRIPTOR_NAMES: [&str; 12] = [
    "D1", "D2", "D3", "D4", "D5", "D6", "D7", "D8", "D9", "D10", "D11", "D12",
];

const AMIN: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescriptorParams {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub f_max: f64,
    pub rolloff: f64,
    pub poly_order: usize,
    pub n_mfcc: usize,
    pub tempogram_win: usize,
    pub contrast_bands: usize,
    pub contrast_fmin: f64,
}

impl Default for DescriptorParams {
    fn default() -> Self {
        Self {
            n_fft: 2048,
            hop: 512,
            n_mels: 64,
            f_max: 16_384.0,
            rolloff: 0.9,
            poly_order: 3,
            n_mfcc: 20,
            tempogram_win: 384,
            contrast_bands: 6,
            contrast_fmin: 200.0,
        }
    }
}

impl DescriptorParams {
    pub fn validate(&self) -> Result<()> {
        let nyq = SAMPLE_RATE as f64 / 2.0;
        if self.n_fft < 16 || self.hop == 0 {
            return Err(Error::invalid("n_fft must be >= 16 and hop positive"));
        }
        if !(self.rolloff > 0.0 && self.rolloff <= 1.0) {
            return Err(Error::invalid(format!("roll-off {} outside (0, 1]", self.rolloff)));
        }
        if self.n_mfcc == 0 || self.n_mfcc > self.n_mels {
            return Err(Error::invalid("n_mfcc must be in 1..=n_mels"));
        }
        if self.tempogram_win == 0 || self.contrast_bands == 0 {
            return Err(Error::invalid("tempogram window and contrast bands must be positive"));
        }
        if !(self.contrast_fmin > 0.0) || self.contrast_fmin * 2f64.powi(self.contrast_bands as i32) >= nyq {
            return Err(Error::invalid("contrast bands exceed the Nyquist frequency"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptorVector(pub [f64; 12]);

impl DescriptorVector {
    pub fn new(d: [f64; 12]) -> Result<Self> {
        if let Some(i) = d.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("{} is not finite", DESCRIPTOR_NAMES[i])));
        }
        Ok(Self(d))
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }
}

/// Precomputed transforms for one parameter set.
pub struct DescriptorExtractor {
    p: DescriptorParams,
    stft: Stft,
    freqs: Vec<f64>,
    bank: MelFilterbank,
    poly_pinv: DMatrix<f64>,
    pitch_class: Vec<Option<usize>>,
}

impl DescriptorExtractor {
    pub fn new(p: DescriptorParams) -> Result<Self> {
        p.validate()?;
        let rate = SAMPLE_RATE as f64;
        let stft = Stft::new(p.n_fft, p.hop);
        let freqs = stft.bin_freqs(rate);
        let bank = MelFilterbank::new(p.n_mels, p.n_fft, rate, p.f_max)?;
        // least squares in frequency scaled to [0, 1]; rescaled afterwards
        let nyq = rate / 2.0;
        let vander = DMatrix::from_fn(freqs.len(), p.poly_order + 1, |r, c| (freqs[r] / nyq).powi(c as i32));
        let gram = vander.transpose() * &vander;
        let inv = gram
            .try_inverse()
            .ok_or_else(|| Error::invalid("polynomial order too high for the FFT size"))?;
        let poly_pinv = inv * vander.transpose();
        let pitch_class = freqs
            .iter()
            .map(|&f| {
                (f >= 32.0).then(|| (((12.0 * (f / 440.0).log2()).round() as i64 + 9).rem_euclid(12)) as usize)
            })
            .collect();
        Ok(Self {
            p,
            stft,
            freqs,
            bank,
            poly_pinv,
            pitch_class,
        })
    }

    pub fn params(&self) -> &DescriptorParams {
        &self.p
    }

    pub fn extract(&self, clip: &StrikeClip) -> DescriptorVector {
        self.extract_samples(clip.samples())
    }

    /// Works on any non-empty sample run, not just fixed-length clips.
    pub fn extract_samples(&self, x: &[f32]) -> DescriptorVector {
        let mags = self.stft.magnitude(x);
        let powers: Vec<Vec<f64>> = mags.iter().map(|m| m.iter().map(|v| v * v).collect()).collect();
        let chroma: Vec<[f64; 12]> = powers.iter().map(|p| self.chroma(p)).collect();
        let d = [
            self.rms(x),
            mean(mags.iter().map(|m| self.centroid(m))),
            mean(mags.iter().map(|m| self.bandwidth(m))),
            mean(mags.iter().map(|m| self.contrast(m))),
            mean(powers.iter().map(|p| flatness(p))),
            mean(mags.iter().map(|m| self.rolloff(m))),
            self.zcr(x),
            self.tempogram(&powers),
            mean(mags.iter().map(|m| self.poly(m))),
            self.mfcc(&powers),
            mean(chroma.iter().flat_map(|c| c.iter().copied())),
            mean(chroma.iter().flat_map(|c| tonnetz(c))),
        ];
        DescriptorVector(d.map(|v| if v.is_finite() { v } else { 0.0 }))
    }

    pub fn extract_batch(&self, exec: Exec, clips: &[StrikeClip]) -> Vec<DescriptorVector> {
        exec.map(clips, |c| self.extract(c))
    }

    fn frames<'a>(&'a self, x: &'a [f32]) -> impl Iterator<Item = impl Iterator<Item = f64> + 'a> + 'a {
        let n = self.p.n_fft;
        let half = (n / 2) as isize;
        (0..self.stft.n_frames(x.len())).map(move |f| {
            let start = (f * self.p.hop) as isize - half;
            (0..n as isize).map(move |i| {
                let j = start + i;
                if j >= 0 && (j as usize) < x.len() {
                    x[j as usize] as f64
                } else {
                    0.0
                }
            })
        })
    }

    fn rms(&self, x: &[f32]) -> f64 {
        let n = self.p.n_fft as f64;
        mean(self.frames(x).map(|fr| (fr.map(|v| v * v).sum::<f64>() / n).sqrt()))
    }

    fn zcr(&self, x: &[f32]) -> f64 {
        let n = self.p.n_fft as f64;
        mean(self.frames(x).map(|fr| {
            let mut prev: Option<bool> = None;
            let mut count = 0usize;
            for v in fr {
                let neg = v < 0.0;
                if prev.is_some_and(|p| p != neg) {
                    count += 1;
                }
                prev = Some(neg);
            }
            count as f64 / n
        }))
    }

    fn centroid(&self, m: &[f64]) -> f64 {
        let total: f64 = m.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        m.iter().zip(&self.freqs).map(|(s, f)| s * f).sum::<f64>() / total
    }

    fn bandwidth(&self, m: &[f64]) -> f64 {
        let total: f64 = m.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        let c = self.centroid(m);
        (m.iter().zip(&self.freqs).map(|(s, f)| s * (f - c).powi(2)).sum::<f64>() / total).sqrt()
    }

    fn contrast(&self, m: &[f64]) -> f64 {
        let nb = self.p.contrast_bands;
        let mut acc = 0.0;
        for b in 0..=nb {
            let lo = if b == 0 { 0.0 } else { self.p.contrast_fmin * 2f64.powi(b as i32 - 1) };
            let hi = if b == nb { f64::INFINITY } else { self.p.contrast_fmin * 2f64.powi(b as i32) };
            let mut band: Vec<f64> = m
                .iter()
                .zip(&self.freqs)
                .filter(|(_, &f)| f >= lo && f <= hi)
                .map(|(s, _)| *s)
                .collect();
            band.sort_by(f64::total_cmp);
            let q = ((0.02 * band.len() as f64).round() as usize).max(1).min(band.len());
            let valley = band[..q].iter().sum::<f64>() / q as f64;
            let peak = band[band.len() - q..].iter().sum::<f64>() / q as f64;
            acc += 10.0 * peak.max(AMIN).log10() - 10.0 * valley.max(AMIN).log10();
        }
        acc / (nb + 1) as f64
    }

    fn rolloff(&self, m: &[f64]) -> f64 {
        let total: f64 = m.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        let target = self.p.rolloff * total;
        let mut cum = 0.0;
        for (s, f) in m.iter().zip(&self.freqs) {
            cum += s;
            if cum >= target {
                return *f;
            }
        }
        *self.freqs.last().unwrap()
    }

    fn poly(&self, m: &[f64]) -> f64 {
        let nyq = SAMPLE_RATE as f64 / 2.0;
        let coef = &self.poly_pinv * DMatrix::from_column_slice(m.len(), 1, m);
        mean(coef.iter().enumerate().map(|(k, c)| c / nyq.powi(k as i32)))
    }

    fn chroma(&self, p: &[f64]) -> [f64; 12] {
        let mut c = [0.0; 12];
        for (v, pc) in p.iter().zip(&self.pitch_class) {
            if let Some(pc) = pc {
                c[*pc] += v;
            }
        }
        let peak = c.iter().cloned().fold(0.0, f64::max);
        if peak > 0.0 {
            c.iter_mut().for_each(|v| *v /= peak);
        }
        c
    }

    /// Log-mel with reference 1 and an 80 dB dynamic range.
    fn log_mel(&self, powers: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut db: Vec<Vec<f64>> = powers
            .iter()
            .map(|p| self.bank.apply(p).into_iter().map(|e| 10.0 * e.max(AMIN).log10()).collect())
            .collect();
        let top = db.iter().flatten().cloned().fold(f64::MIN, f64::max);
        db.iter_mut().flatten().for_each(|v| *v = v.max(top - 80.0));
        db
    }

    fn mfcc(&self, powers: &[Vec<f64>]) -> f64 {
        let m = self.p.n_mels as f64;
        let db = self.log_mel(powers);
        mean(db.iter().flat_map(|row| {
            (0..self.p.n_mfcc).map(move |k| {
                let s = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
                s * row
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * m)).cos())
                    .sum::<f64>()
            })
        }))
    }

    fn tempogram(&self, powers: &[Vec<f64>]) -> f64 {
        let db = self.log_mel(powers);
        let n = db.len();
        let mut onset = vec![0.0; n];
        for t in 1..n {
            onset[t] = db[t]
                .iter()
                .zip(&db[t - 1])
                .map(|(a, b)| (a - b).max(0.0))
                .sum::<f64>()
                / self.p.n_mels as f64;
        }
        let win = self.p.tempogram_win.min(n);
        let w = hann(win);
        let half = win / 2;
        let mut acc = 0.0;
        for t in 0..n {
            let seg: Vec<f64> = (0..win)
                .map(|i| {
                    let j = t as isize + i as isize - half as isize;
                    if j >= 0 && (j as usize) < n {
                        onset[j as usize] * w[i]
                    } else {
                        0.0
                    }
                })
                .collect();
            let ac: Vec<f64> = (0..win)
                .map(|l| (0..win - l).map(|i| seg[i] * seg[i + l]).sum())
                .collect();
            if ac[0] > 0.0 {
                acc += ac.iter().sum::<f64>() / ac[0] / win as f64;
            }
        }
        acc / n as f64
    }
}

fn flatness(p: &[f64]) -> f64 {
    let n = p.len() as f64;
    let logmean = p.iter().map(|v| v.max(AMIN).ln()).sum::<f64>() / n;
    let amean = p.iter().map(|v| v.max(AMIN)).sum::<f64>() / n;
    logmean.exp() / amean
}

fn tonnetz(chroma: &[f64; 12]) -> [f64; 6] {
    let total: f64 = chroma.iter().sum();
    let mut out = [0.0; 6];
    if total <= 0.0 {
        return out;
    }
    // fifths, minor thirds, major thirds as (radius, angle step)
    let axes = [(1.0, 7.0 * PI / 6.0), (1.0, 3.0 * PI / 2.0), (0.5, 2.0 * PI / 3.0)];
    for (pc, c) in chroma.iter().enumerate() {
        let w = c / total;
        for (a, (r, step)) in axes.iter().enumerate() {
            let ang = step * pc as f64;
            out[2 * a] += w * r * ang.sin();
            out[2 * a + 1] += w * r * ang.cos();
        }
    }
    out
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn descriptors(clip: &StrikeClip, params: &DescriptorParams) -> Result<DescriptorVector> {
    Ok(DescriptorExtractor::new(params.clone())?.extract(clip))
}

/// Per-column min-max scaling into `[0, 1]`; constant columns become 0.
pub fn rescale_unit(rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if rows.len() < 2 {
        return Err(Error::invalid("rescaling needs at least two rows"));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::invalid("rows differ in length"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in rescale input"));
    }
    let mut out = rows.to_vec();
    for c in 0..width {
        let lo = rows.iter().map(|r| r[c]).fold(f64::INFINITY, f64::min);
        let hi = rows.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max);
        for r in out.iter_mut() {
            r[c] = if hi > lo { ((r[c] - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
        }
    }
    Ok(out)
}

pub fn write_descriptor_csv(path: &Path, rows: &[DescriptorVector]) -> Result<()> {
    let mut s = DESCRIPTOR_NAMES.join(",");
    s.push('\n');
    for r in rows {
        let line: Vec<String> = r.0.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_descriptor_csv(path: &Path) -> Result<Vec<DescriptorVector>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == DESCRIPTOR_NAMES.join(",") => {}
        _ => return Err(parse_err(1, "expected header D1..D12".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| parse_err(i + 1, e.to_string())))
            .collect::<Result<_>>()?;
        let arr: [f64; 12] = vals
            .try_into()
            .map_err(|v: Vec<f64>| parse_err(i + 1, format!("expected 12 fields, got {}", v.len())))?;
        out.push(DescriptorVector::new(arr).map_err(|e| parse_err(i + 1, e.to_string()))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::CLIP_LEN;
    use rand::{Rng, SeedableRng};

    fn clip(mut f: impl FnMut(usize) -> f64) -> StrikeClip {
        StrikeClip::from_samples((0..CLIP_LEN).map(|i| f(i) as f32).collect()).unwrap()
    }

    fn sine(freq: f64, amp: f64) -> StrikeClip {
        clip(|i| amp * (2.0 * PI * freq * i as f64 / 44_100.0).sin())
    }

    fn ex() -> DescriptorExtractor {
        DescriptorExtractor::new(DescriptorParams::default()).unwrap()
    }

    #[test]
    fn silence() {
        let d = ex().extract(&clip(|_| 0.0));
        assert_eq!(d.get(0), 0.0);
        assert_eq!(d.get(6), 0.0);
        assert!(d.0.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn amplitude_scaling() {
        let e = ex();
        let a = e.extract(&sine(523.0, 0.2));
        let b = e.extract(&sine(523.0, 0.4));
        assert_eq!(a.get(1), b.get(1));
        assert!((b.get(0) - 2.0 * a.get(0)).abs() < 1e-12);
    }

    #[test]
    fn noise_is_flatter_than_sine() {
        // scalar oracle: geometric over arithmetic mean of one frame's power
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let noise = clip(|_| rng.random_range(-0.5..0.5));
        let e = ex();
        let n = e.extract(&noise).get(4);
        let s = e.extract(&sine(200.0, 0.5)).get(4);
        assert!(n > s, "{n} vs {s}");
        assert!(n > 0.3 && s < 0.05, "{n} {s}");
    }

    #[test]
    fn sine_rms_and_zcr_match_closed_form() {
        let d = ex().extract(&sine(1000.0, 0.5));
        // interior frames dominate; edge frames are half padded
        assert!((d.get(0) - 0.5 / 2f64.sqrt()).abs() < 0.03, "{}", d.get(0));
        assert!((d.get(6) - 2000.0 / 44_100.0).abs() < 0.005, "{}", d.get(6));
        assert!((d.get(1) - 1000.0).abs() < 60.0, "{}", d.get(1));
    }

    #[test]
    fn deterministic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let c = clip(|_| rng.random_range(-0.3..0.3));
        assert_eq!(ex().extract(&c), ex().extract(&c));
    }

    #[test]
    fn tonnetz_of_single_class() {
        let mut c = [0.0; 12];
        c[0] = 1.0;
        assert_eq!(tonnetz(&c), [0.0, 1.0, 0.0, 1.0, 0.0, 0.5]);
    }

    #[test]
    fn rescale_examples() {
        let r = rescale_unit(&[vec![1.0, 2.0], vec![3.0, 2.0], vec![5.0, 2.0]]).unwrap();
        assert_eq!(r.iter().map(|x| x[0]).collect::<Vec<_>>(), vec![0.0, 0.5, 1.0]);
        assert!(r.iter().all(|x| x[1] == 0.0));
        assert!(rescale_unit(&[vec![1.0]]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let rows = vec![ex().extract(&sine(300.0, 0.3)), ex().extract(&sine(900.0, 0.1))];
        write_descriptor_csv(&p, &rows).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("D1,D2,"));
        assert_eq!(read_descriptor_csv(&p).unwrap(), rows);
    }

    #[test]
    fn params_validated() {
        let p = DescriptorParams { rolloff: 1.5, ..Default::default() };
        assert!(DescriptorExtractor::new(p).is_err());
        let p = DescriptorParams { f_max: 30_000.0, ..Default::default() };
        assert!(DescriptorExtractor::new(p).is_err());
    }
}
