use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Periodic Hann window of length `n`.
pub(crate) fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Short-time spectra with centred frames (zero padding of `n_fft / 2` on both sides).
pub(crate) struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Self {
            n_fft,
            hop,
            window: hann(n_fft),
            fft,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn n_frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    /// Magnitude spectra, one `n_bins` row per frame.
    pub fn magnitude(&self, x: &[f32]) -> Vec<Vec<f64>> {
        let half = self.n_fft / 2;
        let n_frames = self.n_frames(x.len());
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut out = Vec::with_capacity(n_frames);
        for f in 0..n_frames {
            let start = (f * self.hop) as isize - half as isize;
            for (i, b) in buf.iter_mut().enumerate() {
                let idx = start + i as isize;
                let v = if idx >= 0 && (idx as usize) < x.len() {
                    x[idx as usize] as f64
                } else {
                    0.0
                };
                *b = Complex::new(v * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            out.push(buf[..self.n_bins()].iter().map(|c| c.norm()).collect());
        }
        out
    }

    /// Centre frequency of each bin in Hz.
    pub fn bin_freqs(&self, rate: f64) -> Vec<f64> {
        (0..self.n_bins())
            .map(|k| k as f64 * rate / self.n_fft as f64)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hann_is_periodic() {
        let w = hann(8);
        assert_eq!(w[0], 0.0);
        assert!((w[4] - 1.0).abs() < 1e-15);
        assert!((w[1] - w[7]).abs() < 1e-15);
    }

    #[test]
    fn frame_count() {
        let s = Stft::new(2048, 313);
        assert_eq!(s.n_frames(20_000), 64);
        assert_eq!(Stft::new(2048, 512).n_frames(20_000), 40);
    }

    #[test]
    fn sine_peaks_at_its_bin_and_matches_dft() {
        let n_fft = 256;
        let s = Stft::new(n_fft, 64);
        let k0 = 20.0;
        let x: Vec<f32> = (0..1024)
            .map(|i| (2.0 * std::f64::consts::PI * k0 * i as f64 / n_fft as f64).sin() as f32)
            .collect();
        let mag = s.magnitude(&x);
        let mid = &mag[8];
        let peak = (0..mid.len()).max_by(|&a, &b| mid[a].total_cmp(&mid[b])).unwrap();
        assert_eq!(peak, 20);
        // naive DFT oracle of the same windowed frame
        let w = hann(n_fft);
        let start = 8 * 64 - n_fft / 2;
        for k in [0usize, 19, 20, 21, 100] {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..n_fft {
                let v = x[start + i] as f64 * w[i];
                let ph = -2.0 * std::f64::consts::PI * (k * i) as f64 / n_fft as f64;
                re += v * ph.cos();
                im += v * ph.sin();
            }
            assert!((mid[k] - (re * re + im * im).sqrt()).abs() < 1e-9);
        }
    }
}
