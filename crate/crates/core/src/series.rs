//! Uniformly sampled series and their Fourier-series representation.
//!
//! Integrals over whole periods of uniformly sampled data use the
//! periodic trapezoid rule (plain sample sum × dt over the half-open window),
//! which is exact for trigonometric polynomials below Nyquist.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Relative slack when deciding that a sample count is an integer number of periods.
const PERIOD_TOL: f64 = 1e-6;

/// Number of samples in `cycles` periods of `freq` at `sample_rate`, if integral.
pub fn samples_for_cycles(cycles: usize, freq: f64, sample_rate: f64) -> Option<usize> {
    let exact = cycles as f64 * sample_rate / freq;
    let n = exact.round();
    ((exact - n).abs() <= PERIOD_TOL * exact.max(1.0) && n >= 1.0).then_some(n as usize)
}

/// Whole number of periods of `freq` covered by `n` samples taken at `sample_rate`.
pub fn whole_periods(n: usize, freq: f64, sample_rate: f64) -> Option<usize> {
    let cycles = n as f64 * freq / sample_rate;
    let m = cycles.round();
    ((cycles - m).abs() <= PERIOD_TOL * cycles.max(1.0) && m >= 1.0).then_some(m as usize)
}

/// Fractional phase `2π·frac(f·t)`, stable for large `t`.
#[inline]
pub fn cycle_phase(freq: f64, t: f64) -> f64 {
    let turns = freq * t;
    TAU * (turns - turns.floor())
}

/// Cosine and sine projections `(2/T)∫x cos`, `(2/T)∫x sin` at `freq` over a
/// window holding an integer number of periods.
pub fn project(samples: &[f64], sample_rate: f64, t0: f64, freq: f64) -> (f64, f64) {
    let mut c = 0.0;
    let mut s = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let (sn, cs) = cycle_phase(freq, t0 + i as f64 / sample_rate).sin_cos();
        c += x * cs;
        s += x * sn;
    }
    let scale = 2.0 / samples.len() as f64;
    (c * scale, s * scale)
}

/// `n` logarithmically spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    ensure(lo > 0.0 && hi > lo && lo.is_finite() && hi.is_finite(), || {
        Error::Domain(format!("log grid needs 0 < lo < hi, got [{lo}, {hi}]"))
    })?;
    ensure(n >= 2, || Error::Domain("log grid needs at least two points".into()))?;
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|i| match i {
            0 => lo,
            i if i == n - 1 => hi,
            i => (a + (b - a) * i as f64 / (n - 1) as f64).exp(),
        })
        .collect())
}

/// One Fourier term `cos·cos(2πnft) + sin·sin(2πnft)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub order: usize,
    pub cos: f64,
    pub sin: f64,
}

impl Harmonic {
    pub fn amplitude(&self) -> f64 {
        self.cos.hypot(self.sin)
    }

    /// Phase φ in `A cos(ωt + φ)`.
    pub fn phase(&self) -> f64 {
        (-self.sin).atan2(self.cos)
    }

    pub fn from_polar(order: usize, amplitude: f64, phase: f64) -> Self {
        Harmonic { order, cos: amplitude * phase.cos(), sin: -amplitude * phase.sin() }
    }
}

/// Truncated Fourier series of a periodic signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicSignal {
    pub fundamental: f64,
    pub dc: f64,
    pub harmonics: Vec<Harmonic>,
}

impl PeriodicSignal {
    /// Decomposes uniformly sampled data spanning an integer number of
    /// periods of `fundamental` into DC plus harmonics `1..=max_order`.
    pub fn from_samples(
        samples: &[f64],
        sample_rate: f64,
        t0: f64,
        fundamental: f64,
        max_order: usize,
    ) -> Result<Self> {
        ensure(!samples.is_empty(), || Error::Windowing("empty series".into()))?;
        ensure(fundamental > 0.0 && fundamental.is_finite(), || {
            Error::Domain(format!("fundamental must be positive, got {fundamental}"))
        })?;
        let periods = whole_periods(samples.len(), fundamental, sample_rate).ok_or_else(|| {
            Error::Windowing(format!(
                "{} samples at {sample_rate} Hz do not span an integer number of {fundamental} Hz periods",
                samples.len()
            ))
        })?;
        let nyquist_order = (samples.len() - 1) / (2 * periods);
        ensure(max_order <= nyquist_order, || {
            Error::Windowing(format!("harmonic order {max_order} exceeds resolvable order {nyquist_order}"))
        })?;
        let dc = samples.iter().sum::<f64>() / samples.len() as f64;
        let harmonics = (1..=max_order)
            .map(|order| {
                let (cos, sin) = project(samples, sample_rate, t0, order as f64 * fundamental);
                Harmonic { order, cos, sin }
            })
            .collect();
        Ok(PeriodicSignal { fundamental, dc, harmonics })
    }

    pub fn max_order(&self) -> usize {
        self.harmonics.iter().map(|h| h.order).max().unwrap_or(0)
    }

    pub fn harmonic(&self, order: usize) -> Option<&Harmonic> {
        self.harmonics.iter().find(|h| h.order == order)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let base = cycle_phase(self.fundamental, t);
        self.dc
            + self
                .harmonics
                .iter()
                .map(|h| {
                    let (s, c) = (h.order as f64 * base).sin_cos();
                    h.cos * c + h.sin * s
                })
                .sum::<f64>()
    }

    /// Evaluates at `t0 + i/sample_rate` for `i < n`, using a complex
    /// recurrence for the harmonic multiples.
    pub fn render(&self, t0: f64, sample_rate: f64, n: usize) -> Vec<f64> {
        let max = self.max_order();
        let mut coef = vec![(0.0, 0.0); max + 1];
        for h in &self.harmonics {
            coef[h.order].0 += h.cos;
            coef[h.order].1 += h.sin;
        }
        (0..n)
            .map(|i| {
                let (s1, c1) = cycle_phase(self.fundamental, t0 + i as f64 / sample_rate).sin_cos();
                let (mut c, mut s) = (1.0, 0.0);
                let mut acc = self.dc;
                for &(a, b) in coef.iter().skip(1) {
                    let next_c = c * c1 - s * s1;
                    s = s * c1 + c * s1;
                    c = next_c;
                    acc += a * c + b * s;
                }
                acc
            })
            .collect()
    }

    /// Applies a complex gain per harmonic: `gain(freq) -> (magnitude, phase_lag)`.
    /// DC is scaled by `gain(0).0`.
    pub fn filtered(&self, mut gain: impl FnMut(f64) -> (f64, f64)) -> Self {
        let (dc_gain, _) = gain(0.0);
        let harmonics = self
            .harmonics
            .iter()
            .map(|h| {
                let (g, lag) = gain(h.order as f64 * self.fundamental);
                Harmonic::from_polar(h.order, g * h.amplitude(), h.phase() - lag)
            })
            .collect();
        PeriodicSignal { fundamental: self.fundamental, dc: dc_gain * self.dc, harmonics }
    }

    /// Same signal observed with its time origin moved forward by `dt`.
    pub fn shifted(&self, dt: f64) -> Self {
        let harmonics = self
            .harmonics
            .iter()
            .map(|h| {
                let dphi = TAU * h.order as f64 * self.fundamental * dt;
                Harmonic::from_polar(h.order, h.amplitude(), h.phase() + dphi)
            })
            .collect();
        PeriodicSignal { harmonics, ..self.clone() }
    }

    pub fn scaled(&self, k: f64) -> Self {
        PeriodicSignal {
            fundamental: self.fundamental,
            dc: self.dc * k,
            harmonics: self
                .harmonics
                .iter()
                .map(|h| Harmonic { order: h.order, cos: h.cos * k, sin: h.sin * k })
                .collect(),
        }
    }
}
