//! One-sided magnitude spectra of accelerometer windows.
//!
//! Each axis of an `N`-sample window contributes `N/2 + 1` bins,
//! `|Σ_j s_j e^{-2πi jk/N}| / N` for `k = 0..=N/2`, so the DC bin equals the
//! axis mean. The three spectra are concatenated in x, y, z order into a
//! feature of length `L = 3(N/2 + 1)`.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::ingest::{validate_window_geometry, Origin, WindowFrame};
use crate::{Error, Result};

/// Feature length for windows of `n` samples per axis.
pub const fn feature_len(n: usize) -> usize {
    3 * (n / 2 + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SpectrumOptions {
    /// Multiply by a periodic Hann taper before transforming.
    pub hann: bool,
    /// Emit `ln(1 + magnitude)` instead of the magnitude.
    pub log_magnitude: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFeature {
    /// `[x spectrum | y spectrum | z spectrum]`.
    pub values: Vec<f64>,
    /// Window length the feature came from.
    pub n: usize,
    pub label: Option<usize>,
    pub origin: Origin,
}

impl AsRef<[f64]> for SpectralFeature {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Reusable transform for one window length.
#[derive(Clone)]
pub struct SpectralExtractor {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
    taper: Option<Vec<f64>>,
    log_magnitude: bool,
}

impl std::fmt::Debug for SpectralExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralExtractor")
            .field("n", &self.n)
            .field("hann", &self.taper.is_some())
            .field("log_magnitude", &self.log_magnitude)
            .finish()
    }
}

impl SpectralExtractor {
    pub fn new(n: usize, opts: SpectrumOptions) -> Result<Self> {
        validate_window_geometry(n, 1)?;
        let fft = FftPlanner::new().plan_fft_forward(n);
        let taper = opts.hann.then(|| {
            (0..n)
                .map(|j| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * j as f64 / n as f64).cos()))
                .collect()
        });
        Ok(Self {
            n,
            fft,
            taper,
            log_magnitude: opts.log_magnitude,
        })
    }

    pub fn window_len(&self) -> usize {
        self.n
    }

    pub fn feature_len(&self) -> usize {
        feature_len(self.n)
    }

    /// Spectrum of one axis, `n/2 + 1` values.
    pub fn magnitude(&self, signal: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.n / 2 + 1);
        self.magnitude_into(signal, &mut out)?;
        Ok(out)
    }

    fn magnitude_into(&self, signal: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if signal.len() != self.n {
            return Err(Error::dim(self.n, signal.len(), "spectrum input length"));
        }
        if signal.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("spectrum input contains non-finite values".into()));
        }
        let mut buf: Vec<Complex<f64>> = match &self.taper {
            Some(w) => signal
                .iter()
                .zip(w)
                .map(|(s, w)| Complex::new(s * w, 0.0))
                .collect(),
            None => signal.iter().map(|&s| Complex::new(s, 0.0)).collect(),
        };
        self.fft.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        out.extend(buf[..=self.n / 2].iter().map(|c| {
            let m = c.norm() * scale;
            if self.log_magnitude {
                m.ln_1p()
            } else {
                m
            }
        }));
        Ok(())
    }

    pub fn feature(&self, window: &WindowFrame) -> Result<SpectralFeature> {
        let mut values = Vec::with_capacity(self.feature_len());
        for axis in &window.axes {
            self.magnitude_into(axis, &mut values)?;
        }
        Ok(SpectralFeature {
            values,
            n: self.n,
            label: window.label,
            origin: window.origin,
        })
    }
}

/// Magnitude spectrum of an even-length signal with the default options.
pub fn dft_magnitude(signal: &[f64]) -> Result<Vec<f64>> {
    SpectralExtractor::new(signal.len(), SpectrumOptions::default())?.magnitude(signal)
}

/// Spectral feature of a window with the default options.
pub fn spectral_feature(window: &WindowFrame) -> Result<SpectralFeature> {
    let n = window.len();
    if window.axes.iter().any(|a| a.len() != n) {
        return Err(Error::Invalid("window axes have different lengths".into()));
    }
    SpectralExtractor::new(n, SpectrumOptions::default())?.feature(window)
}

/// Features for many windows of the same length, in input order.
pub fn spectral_features(
    windows: &[WindowFrame],
    n: usize,
    opts: SpectrumOptions,
) -> Result<Vec<SpectralFeature>> {
    let extractor = SpectralExtractor::new(n, opts)?;
    windows.iter().map(|w| extractor.feature(w)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::StreamId;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Direct O(N²) evaluation of the normalized one-sided DFT magnitude.
    fn direct_dft(signal: &[f64]) -> Vec<f64> {
        let n = signal.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (j, s) in signal.iter().enumerate() {
                    let phase = -2.0 * PI * ((j * k) % n) as f64 / n as f64;
                    re += s * phase.cos();
                    im += s * phase.sin();
                }
                (re * re + im * im).sqrt() / n as f64
            })
            .collect()
    }

    fn lcg_signal(n: usize, seed: u64) -> Vec<f64> {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
            })
            .collect()
    }

    fn frame(axes: [Vec<f64>; 3]) -> WindowFrame {
        WindowFrame {
            axes,
            label: Some(3),
            origin: Origin {
                stream: StreamId::default(),
                start: 7,
            },
        }
    }

    #[test]
    fn constant_signal_is_dc_only() {
        let m = dft_magnitude(&[-0.75; 64]).unwrap();
        assert!((m[0] - 0.75).abs() < 1e-15);
        assert!(m[1..].iter().all(|v| *v < 1e-12));
    }

    #[test]
    fn pure_cosine_lands_in_one_bin() {
        let n = 200;
        let s: Vec<f64> = (0..n).map(|j| (2.0 * PI * 5.0 * j as f64 / n as f64).cos()).collect();
        let m = dft_magnitude(&s).unwrap();
        assert_eq!(m.len(), 101);
        assert!((m[5] - 0.5).abs() < 1e-10);
        for (k, v) in m.iter().enumerate() {
            if k != 5 {
                assert!(*v < 1e-10, "bin {k} = {v}");
            }
        }
    }

    #[test]
    fn agrees_with_direct_dft() {
        for (i, n) in [8usize, 200, 256, 392].into_iter().enumerate() {
            let s = lcg_signal(n, i as u64 + 1);
            let fast = dft_magnitude(&s).unwrap();
            let slow = direct_dft(&s);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-9, "n={n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn rejects_bad_lengths_and_values() {
        assert!(matches!(dft_magnitude(&[1.0; 7]), Err(Error::Config(_))));
        assert!(matches!(dft_magnitude(&[]), Err(Error::Config(_))));
        assert!(dft_magnitude(&[1.0, f64::NAN]).is_err());
        let ex = SpectralExtractor::new(8, SpectrumOptions::default()).unwrap();
        assert!(matches!(ex.magnitude(&[0.0; 6]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn feature_lengths() {
        for (n, l) in [(200, 303), (256, 387), (392, 591)] {
            let f = spectral_feature(&frame([vec![0.0; n], vec![0.0; n], vec![0.0; n]])).unwrap();
            assert_eq!(f.values.len(), l);
            assert!(f.values.iter().all(|v| *v == 0.0));
            assert_eq!(f.label, Some(3));
            assert_eq!(f.origin.start, 7);
        }
    }

    #[test]
    fn feature_concatenates_axes_in_order() {
        let f = spectral_feature(&frame([vec![1.0; 4], vec![2.0; 4], vec![3.0; 4]])).unwrap();
        assert_eq!(f.values, vec![1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 3.0, 0.0, 0.0]);
    }

    #[test]
    fn parseval_bound_and_pure_tone_equality() {
        let n = 256;
        let s = lcg_signal(n, 99);
        let m = dft_magnitude(&s).unwrap();
        let lhs: f64 = m.iter().map(|v| v * v).sum();
        let rhs: f64 = s.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!(lhs <= rhs + 1e-12);

        // A Nyquist tone puts all its energy in one self-conjugate bin.
        let tone: Vec<f64> = (0..n).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let m = dft_magnitude(&tone).unwrap();
        let lhs: f64 = m.iter().map(|v| v * v).sum();
        let rhs: f64 = tone.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn options_change_output() {
        let s = lcg_signal(16, 5);
        let plain = dft_magnitude(&s).unwrap();
        let log = SpectralExtractor::new(16, SpectrumOptions { hann: false, log_magnitude: true })
            .unwrap()
            .magnitude(&s)
            .unwrap();
        for (p, l) in plain.iter().zip(&log) {
            assert!((p.ln_1p() - l).abs() < 1e-15);
        }
        let hann = SpectralExtractor::new(16, SpectrumOptions { hann: true, log_magnitude: false })
            .unwrap()
            .magnitude(&[1.0; 16])
            .unwrap();
        assert!((hann[0] - 0.5).abs() < 1e-15);
        assert!((hann[1] - 0.25).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn feature_length_identity(half in 1usize..300) {
            let n = 2 * half;
            let f = spectral_feature(&frame([vec![0.5; n], vec![0.0; n], vec![0.0; n]])).unwrap();
            prop_assert_eq!(f.values.len(), 3 * (n / 2 + 1));
            prop_assert_eq!(f.values.len(), feature_len(n));
        }

        #[test]
        fn circular_shift_keeps_magnitudes(seed in 0u64..1000, shift in 0usize..64, half in 1usize..40) {
            let n = 2 * half;
            let s = lcg_signal(n, seed);
            let mut shifted = s.clone();
            shifted.rotate_left(shift % n);
            let a = dft_magnitude(&s).unwrap();
            let b = dft_magnitude(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-10);
            }
            prop_assert!(a.iter().all(|v| *v >= 0.0));
        }
    }
}
