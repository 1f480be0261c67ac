use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stft::Stft;
use super::{StrikeClip, CLIP_LEN, SAMPLE_RATE};
use crate::cloud::sidecar_path;
use crate::error::{Error, Result};
use crate::exec::Exec;

pub const FFT_SIZE: usize = 2048;
pub const N_MELS: usize = 64;
pub const N_FRAMES: usize = 64;
pub const DB_FLOOR: f64 = -80.0;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-scale filters between 0 Hz and `f_max`, each scaled so its
/// largest weight is 1.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `n_mels` rows of `n_fft/2 + 1` weights.
    pub weights: Vec<Vec<f64>>,
    /// Filter edges and centres in Hz (`n_mels + 2` points).
    pub points_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, rate: f64, f_max: f64) -> Result<Self> {
        if !(f_max > 0.0) || f_max > rate / 2.0 {
            return Err(Error::invalid(format!(
                "f_max {f_max} Hz must lie in (0, {}]",
                rate / 2.0
            )));
        }
        if n_mels == 0 {
            return Err(Error::invalid("n_mels must be positive"));
        }
        let top = hz_to_mel(f_max);
        let points_hz: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let n_bins = n_fft / 2 + 1;
        let mut weights = Vec::with_capacity(n_mels);
        for m in 0..n_mels {
            let mut row: Vec<f64> = (0..n_bins)
                .map(|k| tri(k as f64 * rate / n_fft as f64, &points_hz[m..m + 3]))
                .collect();
            let peak = row.iter().cloned().fold(0.0, f64::max);
            if peak <= 0.0 {
                return Err(Error::invalid(format!(
                    "mel band {m} covers no FFT bin; use fewer bands or a larger FFT"
                )));
            }
            row.iter_mut().for_each(|w| *w /= peak);
            weights.push(row);
        }
        Ok(Self { weights, points_hz })
    }

    /// Band whose triangle responds most strongly to `freq`.
    pub fn band_for(&self, freq: f64) -> usize {
        (0..self.weights.len())
            .map(|m| (m, tri(freq, &self.points_hz[m..m + 3])))
            .fold((0, f64::MIN), |best, c| if c.1 > best.1 { c } else { best })
            .0
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|row| row.iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }
}

fn tri(f: f64, p: &[f64]) -> f64 {
    let (l, c, r) = (p[0], p[1], p[2]);
    let up = (f - l) / (c - l);
    let down = (r - f) / (r - c);
    up.min(down).max(0.0)
}

/// How spectrograms are scaled before entering a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrogramNorm {
    None,
    /// Zero mean, unit variance per spectrogram.
    #[default]
    Standardize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramMeta {
    pub fft: usize,
    pub n_mels: usize,
    pub f_max: f64,
    pub hop: usize,
}

/// Log-power mel image, `N_MELS` rows (bands) by `N_FRAMES` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    values: Vec<f32>,
    pub meta: SpectrogramMeta,
}

impl MelSpectrogram {
    pub fn from_values(values: Vec<f32>, meta: SpectrogramMeta) -> Result<Self> {
        if values.len() != N_MELS * N_FRAMES {
            return Err(Error::invalid(format!(
                "spectrogram must hold {} values, got {}",
                N_MELS * N_FRAMES,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("spectrogram has non-finite entries"));
        }
        Ok(Self { values, meta })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn at(&self, band: usize, frame: usize) -> f32 {
        self.values[band * N_FRAMES + frame]
    }

    /// Network input under the given normalization.
    pub fn to_input(&self, norm: SpectrogramNorm) -> Vec<f64> {
        let v: Vec<f64> = self.values.iter().map(|&x| x as f64).collect();
        match norm {
            SpectrogramNorm::None => v,
            SpectrogramNorm::Standardize => {
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                if var <= 1e-20 {
                    vec![0.0; v.len()]
                } else {
                    let sd = var.sqrt();
                    v.iter().map(|x| (x - mean) / sd).collect()
                }
            }
        }
    }
}

/// Reusable FFT plan and filterbank for one `f_max`.
pub struct MelExtractor {
    stft: Stft,
    bank: MelFilterbank,
    meta: SpectrogramMeta,
}

impl MelExtractor {
    pub fn new(f_max: f64) -> Result<Self> {
        let hop = (CLIP_LEN as f64 / N_FRAMES as f64).round() as usize;
        let bank = MelFilterbank::new(N_MELS, FFT_SIZE, SAMPLE_RATE as f64, f_max)?;
        Ok(Self {
            stft: Stft::new(FFT_SIZE, hop),
            bank,
            meta: SpectrogramMeta {
                fft: FFT_SIZE,
                n_mels: N_MELS,
                f_max,
                hop,
            },
        })
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    pub fn meta(&self) -> SpectrogramMeta {
        self.meta
    }

    pub fn extract(&self, clip: &StrikeClip) -> MelSpectrogram {
        let mags = self.stft.magnitude(clip.samples());
        let mut mel = vec![0.0f64; N_MELS * N_FRAMES];
        for (f, mag) in mags.iter().take(N_FRAMES).enumerate() {
            let power: Vec<f64> = mag.iter().map(|m| m * m).collect();
            for (b, e) in self.bank.apply(&power).into_iter().enumerate() {
                mel[b * N_FRAMES + f] = e;
            }
        }
        let peak = mel.iter().cloned().fold(0.0, f64::max);
        let values = mel
            .iter()
            .map(|&p| {
                if peak <= 0.0 || p <= 0.0 {
                    DB_FLOOR as f32
                } else {
                    (10.0 * (p / peak).log10()).max(DB_FLOOR) as f32
                }
            })
            .collect();
        MelSpectrogram {
            values,
            meta: self.meta,
        }
    }

    pub fn extract_batch(&self, exec: Exec, clips: &[StrikeClip]) -> Vec<MelSpectrogram> {
        exec.map(clips, |c| self.extract(c))
    }
}

pub fn mel_spectrogram(clip: &StrikeClip, f_max: f64) -> Result<MelSpectrogram> {
    Ok(MelExtractor::new(f_max)?.extract(clip))
}

/// Flat little-endian f32, row-major, with `<path>.json` metadata.
pub fn write_spectrogram(path: &Path, s: &MelSpectrogram) -> Result<()> {
    let bytes: Vec<u8> = s.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let sp = sidecar_path(path);
    std::fs::write(&sp, serde_json::to_vec_pretty(&s.meta)?).map_err(|e| Error::io(sp, e))
}

pub fn read_spectrogram(path: &Path) -> Result<MelSpectrogram> {
    let sp = sidecar_path(path);
    let meta: SpectrogramMeta =
        serde_json::from_slice(&std::fs::read(&sp).map_err(|e| Error::io(&sp, e))?)?;
    if meta.n_mels != N_MELS {
        return Err(Error::invalid(format!("{}: n_mels {} != {N_MELS}", sp.display(), meta.n_mels)));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::invalid(format!("{}: truncated f32 data", path.display())));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    MelSpectrogram::from_values(values, meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine_clip(freq: f64, amp: f64) -> StrikeClip {
        StrikeClip::from_samples(
            (0..CLIP_LEN)
                .map(|i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 44_100.0).sin()) as f32)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn mel_scale_round_trips() {
        for f in [0.0, 100.0, 1000.0, 8192.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
        assert!((hz_to_mel(1000.0) - 999.9855).abs() < 1e-3);
    }

    #[test]
    fn hop_and_shape() {
        let ex = MelExtractor::new(8192.0).unwrap();
        assert_eq!(ex.meta().hop, 313);
        let s = ex.extract(&sine_clip(440.0, 0.5));
        assert_eq!(s.values().len(), 64 * 64);
        assert!(s.values().iter().all(|v| v.is_finite() && *v <= 0.0 && *v >= -80.0));
    }

    #[test]
    fn filterbank_properties() {
        let bank = MelFilterbank::new(64, 2048, 44_100.0, 8192.0).unwrap();
        let bin_hz = 44_100.0 / 2048.0;
        for row in &bank.weights {
            assert!(row.iter().all(|&w| w >= 0.0));
            let peak = row.iter().cloned().fold(0.0, f64::max);
            assert!((peak - 1.0).abs() < 1e-12);
            assert_eq!(row.iter().filter(|&&w| w == peak).count(), 1);
        }
        let (lo, hi) = (bank.points_hz[1], bank.points_hz[64]);
        for k in 0..1025 {
            let f = k as f64 * bin_hz;
            if f >= lo && f <= hi {
                assert!(bank.weights.iter().any(|r| r[k] > 0.0), "bin {k} uncovered");
            }
        }
    }

    #[test]
    fn f_max_above_nyquist_rejected() {
        assert!(MelExtractor::new(22_051.0).is_err());
        assert!(MelExtractor::new(22_050.0).is_ok());
    }

    #[test]
    fn sine_lands_in_its_band() {
        let ex = MelExtractor::new(8192.0).unwrap();
        let want = ex.filterbank().band_for(1000.0);
        let s = ex.extract(&sine_clip(1000.0, 0.5));
        for f in 0..N_FRAMES {
            let best = (0..N_MELS).max_by(|&a, &b| s.at(a, f).total_cmp(&s.at(b, f))).unwrap();
            assert_eq!(best, want, "frame {f}");
        }
    }

    #[test]
    fn silence_is_floor() {
        let s = mel_spectrogram(&StrikeClip::from_samples(vec![0.0; CLIP_LEN]).unwrap(), 8192.0).unwrap();
        assert!(s.values().iter().all(|&v| v == -80.0));
        assert!(s.to_input(SpectrogramNorm::Standardize).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardized_input_has_unit_moments() {
        let s = mel_spectrogram(&sine_clip(300.0, 0.3), 8192.0).unwrap();
        let x = s.to_input(SpectrogramNorm::Standardize);
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        let s = mel_spectrogram(&sine_clip(700.0, 0.4), 8192.0).unwrap();
        write_spectrogram(&p, &s).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 64 * 64 * 4);
        let side: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("s.bin.json")).unwrap()).unwrap();
        assert_eq!(side["fft"], 2048);
        assert_eq!(side["hop"], 313);
        assert_eq!(read_spectrogram(&p).unwrap(), s);
    }
}
