//! Strike extraction and spectral features of contact-microphone recordings.

mod descriptors;
mod mel;
mod separability;
mod stft;
mod strike;
mod wav;

pub use descriptors::{
    descriptors, read_descriptor_csv, rescale_unit, write_descriptor_csv, DescriptorExtractor, DescriptorParams,
    DescriptorVector, DESCRIPTOR_NAMES,
};
pub use mel::{
    mel_spectrogram, read_spectrogram, write_spectrogram, MelExtractor, MelFilterbank, MelSpectrogram,
    SpectrogramMeta, SpectrogramNorm, DB_FLOOR, FFT_SIZE, N_FRAMES, N_MELS,
};
pub use separability::{separability, Separability};
pub use strike::{detect_strike, extract_clip, StrikeClip, STRIKE_WINDOW};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 44_100;
/// Samples per extracted strike (~0.4535 s).
pub const CLIP_LEN: usize = 20_000;

/// Mono recording at 44.1 kHz with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
}

impl Waveform {
    pub fn new(samples: Vec<f32>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("waveform is empty"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::invalid(format!(
                "sample {i} = {} is outside [-1, 1]",
                samples[i]
            )));
        }
        Ok(Self { samples })
    }

    /// Clamps into `[-1, 1]` instead of rejecting; non-finite samples become 0.
    pub fn from_clamped(samples: impl IntoIterator<Item = f32>) -> Result<Self> {
        Self::new(
            samples
                .into_iter()
                .map(|s| if s.is_finite() { s.clamp(-1.0, 1.0) } else { 0.0 })
                .collect(),
        )
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn waveform_invariants() {
        assert!(Waveform::new(vec![]).is_err());
        assert!(Waveform::new(vec![0.0, 1.5]).is_err());
        assert!(Waveform::new(vec![f32::NAN]).is_err());
        let w = Waveform::from_clamped([2.0, -3.0, f32::INFINITY, 0.5]).unwrap();
        assert_eq!(w.samples(), &[1.0, -1.0, 0.0, 0.5]);
        assert_eq!(w.rate(), 44_100);
    }
}
