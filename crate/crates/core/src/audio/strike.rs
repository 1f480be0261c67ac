use super::{Waveform, CLIP_LEN};
use crate::error::{Error, Result};

/// Window length, in samples, used to locate the strike onset.
pub const STRIKE_WINDOW: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct StrikeClip {
    samples: Vec<f32>,
    /// Index into the parent waveform of the first clip sample.
    pub source_offset: usize,
    /// Zeros appended because the recording ended early.
    pub padding: usize,
}

impl StrikeClip {
    pub fn from_samples(samples: Vec<f32>) -> Result<Self> {
        if samples.len() != CLIP_LEN {
            return Err(Error::invalid(format!(
                "strike clip must have {CLIP_LEN} samples, got {}",
                samples.len()
            )));
        }
        Ok(Self {
            samples,
            source_offset: 0,
            padding: 0,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }
}

/// Offset of the first window whose mean absolute amplitude strictly exceeds
/// both neighbours.
///
/// The signal is treated as zero-padded: a partial trailing window is averaged
/// over the full window length, and the windows before the first and after the
/// last have mean zero. Returns `None` when no window qualifies.
pub fn detect_strike(w: &Waveform, window: usize) -> Result<Option<usize>> {
    if window == 0 {
        return Err(Error::invalid("window must be positive"));
    }
    let s = w.samples();
    if s.len() < 3 * window {
        return Err(Error::invalid(format!(
            "waveform of {} samples is shorter than three {window}-sample windows",
            s.len()
        )));
    }
    let means: Vec<f64> = s
        .chunks(window)
        .map(|c| c.iter().map(|x| x.abs() as f64).sum::<f64>() / window as f64)
        .collect();
    let at = |k: isize| -> f64 {
        if k < 0 {
            0.0
        } else {
            means.get(k as usize).copied().unwrap_or(0.0)
        }
    };
    Ok((0..means.len() as isize)
        .find(|&k| at(k) > at(k - 1) && at(k) > at(k + 1))
        .map(|k| k as usize * window))
}

/// The `CLIP_LEN` samples starting at `offset`, zero-padded past the end.
pub fn extract_clip(w: &Waveform, offset: usize) -> Result<StrikeClip> {
    let s = w.samples();
    if offset >= s.len() {
        return Err(Error::invalid(format!(
            "offset {offset} beyond waveform of {} samples",
            s.len()
        )));
    }
    let end = (offset + CLIP_LEN).min(s.len());
    let mut samples = Vec::with_capacity(CLIP_LEN);
    samples.extend_from_slice(&s[offset..end]);
    let padding = CLIP_LEN - samples.len();
    samples.resize(CLIP_LEN, 0.0);
    Ok(StrikeClip {
        samples,
        source_offset: offset,
        padding,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert_eq, proptest};

    /// Straightforward scan mirroring the onset rule, used as an oracle.
    fn scan_oracle(s: &[f32], window: usize) -> Option<usize> {
        let n = s.len().div_ceil(window);
        let mut means = vec![0.0f64; n + 2];
        for k in 0..n {
            let mut acc = 0.0;
            for i in k * window..((k + 1) * window).min(s.len()) {
                acc += s[i].abs() as f64;
            }
            means[k + 1] = acc / window as f64;
        }
        (1..=n).find(|&k| means[k] > means[k - 1] && means[k] > means[k + 1]).map(|k| (k - 1) * window)
    }

    fn impulse(len: usize, at: &[usize], decay: f64) -> Vec<f32> {
        let mut s = vec![0.0f32; len];
        for &start in at {
            for (i, v) in s[start..].iter_mut().enumerate().take(8000) {
                let t = i as f64 / 44_100.0;
                *v += (0.8 * (-decay * t).exp() * (2.0 * std::f64::consts::PI * 900.0 * t).sin()) as f32;
            }
        }
        s
    }

    #[test]
    fn finds_injected_impulse() {
        let w = Waveform::new(impulse(5 * 44_100, &[30_000], 60.0)).unwrap();
        let got = detect_strike(&w, 1000).unwrap().unwrap();
        assert_eq!(Some(got), scan_oracle(w.samples(), 1000));
        assert!((29_000..=31_000).contains(&got), "{got}");
    }

    #[test]
    fn silence_has_no_strike() {
        let w = Waveform::new(vec![0.0; 10_000]).unwrap();
        assert_eq!(detect_strike(&w, 1000).unwrap(), None);
    }

    #[test]
    fn first_of_two_impulses() {
        let w = Waveform::new(impulse(60_000, &[10_000, 40_000], 80.0)).unwrap();
        let got = detect_strike(&w, 1000).unwrap().unwrap();
        assert_eq!(Some(got), scan_oracle(w.samples(), 1000));
        assert!((9_000..=11_000).contains(&got));
    }

    #[test]
    fn short_waveform_rejected() {
        let w = Waveform::new(vec![0.1; 2_999]).unwrap();
        assert!(detect_strike(&w, 1000).is_err());
    }

    #[test]
    fn clip_bounds_and_padding() {
        let w = Waveform::new((0..5 * 44_100).map(|i| (i % 100) as f32 / 100.0).collect()).unwrap();
        let c = extract_clip(&w, 0).unwrap();
        assert_eq!(c.samples(), &w.samples()[..CLIP_LEN]);
        assert_eq!(c.padding, 0);
        let tail = extract_clip(&w, w.len() - 100).unwrap();
        assert_eq!(tail.samples().len(), CLIP_LEN);
        assert_eq!(&tail.samples()[..100], &w.samples()[w.len() - 100..]);
        assert!(tail.samples()[100..].iter().all(|&x| x == 0.0));
        assert_eq!(tail.padding, 19_900);
        assert!(extract_clip(&w, w.len()).is_err());
    }

    #[test]
    fn clip_keeps_impulse_energy() {
        let s = impulse(5 * 44_100, &[30_000], 60.0);
        let total: f64 = s.iter().map(|x| (*x as f64).powi(2)).sum();
        let w = Waveform::new(s).unwrap();
        let off = detect_strike(&w, 1000).unwrap().unwrap();
        let clip = extract_clip(&w, off).unwrap();
        let kept: f64 = clip.samples().iter().map(|x| (*x as f64).powi(2)).sum();
        assert!(kept / total >= 0.99, "{}", kept / total);
    }

    proptest! {
        #[test]
        fn translation_covariant(pos in 3_000usize..50_000, shift in 0usize..20, decay in 20.0f64..200.0) {
            let base = impulse(60_000, &[pos], decay);
            let mut shifted = vec![0.0f32; shift * 1000];
            shifted.extend_from_slice(&base);
            let a = detect_strike(&Waveform::new(base).unwrap(), 1000).unwrap();
            let b = detect_strike(&Waveform::new(shifted).unwrap(), 1000).unwrap();
            prop_assert_eq!(b, a.map(|o| o + shift * 1000));
        }

        #[test]
        fn matches_scan_oracle(samples in proptest::collection::vec(-1.0f32..1.0, 3000..9000)) {
            let w = Waveform::new(samples.clone()).unwrap();
            prop_assert_eq!(detect_strike(&w, 1000).unwrap(), scan_oracle(&samples, 1000));
        }

        #[test]
        fn clip_length_is_constant(len in 1usize..60_000, frac in 0.0f64..1.0) {
            let w = Waveform::new(vec![0.25; len]).unwrap();
            let off = ((len - 1) as f64 * frac) as usize;
            prop_assert_eq!(extract_clip(&w, off).unwrap().samples().len(), CLIP_LEN);
        }
    }
}
