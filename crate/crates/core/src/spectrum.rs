//! One-sided power spectral density by Welch averaging.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Psd {
    pub freqs: Vec<f64>,
    /// Units² per Hz.
    pub density: Vec<f64>,
}

impl Psd {
    /// Square root of the mean density over `[lo, hi]` Hz.
    pub fn mean_asd(&self, lo: f64, hi: f64) -> Option<f64> {
        let sel: Vec<f64> = self
            .freqs
            .iter()
            .zip(&self.density)
            .filter(|(f, _)| (lo..=hi).contains(*f))
            .map(|(_, d)| *d)
            .collect();
        (!sel.is_empty()).then(|| (sel.iter().sum::<f64>() / sel.len() as f64).sqrt())
    }

    /// Frequency of the largest bin above `min_freq`.
    pub fn peak(&self, min_freq: f64) -> Option<(f64, f64)> {
        self.freqs
            .iter()
            .zip(&self.density)
            .filter(|(f, _)| **f > min_freq)
            .map(|(f, d)| (*f, *d))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Hann-windowed segments of `segment_len` samples with 50 % overlap.
/// Bins run from DC to Nyquist in steps of `sample_rate / segment_len`.
pub fn welch(samples: &[f64], sample_rate: f64, segment_len: usize) -> Result<Psd> {
    ensure(segment_len >= 4 && segment_len <= samples.len(), || {
        Error::Windowing(format!(
            "segment length {segment_len} must lie in [4, {}]",
            samples.len()
        ))
    })?;
    ensure(sample_rate > 0.0, || Error::Domain("sample rate must be positive".into()))?;
    let window: Vec<f64> = (0..segment_len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / segment_len as f64).cos())
        .collect();
    let w2: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(segment_len);
    let step = segment_len / 2;
    let bins = segment_len / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut buf = vec![Complex::new(0.0, 0.0); segment_len];
    let mut segments = 0usize;
    let mut start = 0;
    while start + segment_len <= samples.len() {
        let seg = &samples[start..start + segment_len];
        let mean = seg.iter().sum::<f64>() / segment_len as f64;
        for ((b, x), w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        segments += 1;
        start += step;
    }
    let scale = 1.0 / (sample_rate * w2 * segments as f64);
    let density = acc
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let one_sided = if i == 0 || (segment_len.is_multiple_of(2) && i == bins - 1) { 1.0 } else { 2.0 };
            a * scale * one_sided
        })
        .collect();
    let freqs = (0..bins).map(|i| i as f64 * sample_rate / segment_len as f64).collect();
    Ok(Psd { freqs, density })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn white_noise_level() {
        let fs = 1000.0;
        let sigma = 2.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..200_000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sigma * z
            })
            .collect();
        let psd = welch(&x, fs, 1024).unwrap();
        // One-sided density of white noise is 2σ²/fs.
        let expected = (2.0 * sigma * sigma / fs).sqrt();
        let asd = psd.mean_asd(10.0, 490.0).unwrap();
        assert!(((asd - expected) / expected).abs() < 0.02, "{asd} {expected}");
    }

    #[test]
    fn sinusoid_peak() {
        let fs = 200.0;
        let x: Vec<f64> = (0..4000).map(|i| (2.0 * PI * 6.0 * i as f64 / fs).sin()).collect();
        let (f, _) = welch(&x, fs, 400).unwrap().peak(0.5).unwrap();
        assert!((f - 6.0).abs() < 1e-9);
    }

    #[test]
    fn bad_segment() {
        assert!(welch(&[0.0; 10], 1.0, 20).is_err());
    }
}
