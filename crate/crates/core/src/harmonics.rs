//! Fourier templates, phase-synchronous lock-in per harmonic, c²-weighted
//! combination and block statistics.
//!
//! The template models the per-unit-coupling field as
//! `a₁ Σ_k c_k cos(k(2π f_m τ + φ))` with τ measured from the first sample
//! of the template series and c₁ = 1. Harmonic k is demodulated against
//! `cos(2πk f_m τ + kφ)`, which keeps every c_k real for any time origin.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::field::{uniform_rate, FieldTimeSeries};
use crate::response::SensorResponse;
use crate::series::{cycle_phase, project, samples_for_cycles, whole_periods};
use crate::synth::SyntheticRun;

pub const DEFAULT_HARMONICS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicTemplate {
    /// Modulation frequency, Hz.
    pub f_m: f64,
    /// Fundamental phase at τ = 0, rad.
    pub phi: f64,
    /// Normalized coefficients, `c[0]` = c₁ = 1.
    pub c: Vec<f64>,
    /// Fundamental field amplitude per unit coupling, T.
    pub a1: f64,
    /// Rotor angle of block 0 at τ = 0, rad.
    pub reference_angle: f64,
    /// Rotor harmonics per modulation cycle.
    pub symmetry_order: usize,
}

impl HarmonicTemplate {
    pub fn harmonics(&self) -> usize {
        self.c.len()
    }

    pub fn coefficient(&self, k: usize) -> Result<f64> {
        let c = *k.checked_sub(1).and_then(|i| self.c.get(i)).ok_or(Error::UndefinedHarmonic(k))?;
        ensure(c != 0.0, || Error::UndefinedHarmonic(k))?;
        Ok(c)
    }

    /// Fundamental phase of a record whose first sample sees block 0 at `start_angle`.
    pub fn phase_at(&self, start_angle: f64) -> f64 {
        (self.phi + self.symmetry_order as f64 * (start_angle - self.reference_angle)).rem_euclid(TAU)
    }

    /// Same waveform truncated to `k` harmonics.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        ensure(k >= 1 && k <= self.c.len(), || Error::UndefinedHarmonic(k))?;
        Ok(HarmonicTemplate { c: self.c[..k].to_vec(), ..self.clone() })
    }

    /// Per-unit-coupling field on a grid τ = i/fs, T.
    pub fn render(&self, sample_rate: f64, n: usize, phase: f64) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let base = cycle_phase(self.f_m, i as f64 / sample_rate) + phase;
                self.a1 * self.c.iter().enumerate().map(|(j, c)| c * ((j + 1) as f64 * base).cos()).sum::<f64>()
            })
            .collect()
    }
}

/// Template coefficients of a per-unit-coupling field series.
pub fn fourier_coefficients(field: &FieldTimeSeries, k: usize) -> Result<HarmonicTemplate> {
    ensure(k >= 1, || Error::Domain("at least one harmonic is required".into()))?;
    let fs = uniform_rate(&field.times)?;
    let f_m = field.modulation_freq;
    let n = field.len();
    let periods = whole_periods(n, f_m, fs).ok_or_else(|| {
        Error::Windowing(format!("field series does not span an integer number of {f_m} Hz cycles"))
    })?;
    ensure(k <= (n - 1) / (2 * periods), || {
        Error::Windowing(format!("harmonic {k} is not resolved by the field grid"))
    })?;
    let proj: Vec<(f64, f64)> =
        (1..=k).map(|j| project(&field.b_per_coupling, fs, 0.0, j as f64 * f_m)).collect();
    let (c1, s1) = proj[0];
    let a1 = c1.hypot(s1);
    ensure(a1 > 0.0 && a1.is_finite(), || {
        Error::Degenerate("fundamental amplitude vanishes".into())
    })?;
    let phi = (-s1).atan2(c1);
    let c = proj
        .iter()
        .enumerate()
        .map(|(j, &(cj, sj))| {
            let (s, c) = ((j + 1) as f64 * phi).sin_cos();
            (cj * c - sj * s) / a1
        })
        .collect();
    Ok(HarmonicTemplate {
        f_m,
        phi,
        c,
        a1,
        reference_angle: field.start_angle,
        symmetry_order: field.symmetry_order,
    })
}

/// `(2/T) ∫₀ᵀ cos(2π f τ + phase) x(τ) dτ` over `T = cycles/f_m` with τ = i/fs.
/// Exact periodic sum when T holds an integer number of samples, otherwise
/// trapezoid with a linearly interpolated tail.
fn windowed_projection(samples: &[f64], fs: f64, f_m: f64, cycles: usize, freq: f64, phase: f64) -> Result<f64> {
    ensure(cycles >= 1, || Error::Windowing("need at least one cycle".into()))?;
    let weight = |i: usize| (cycle_phase(freq, i as f64 / fs) + phase).cos();
    if let Some(n) = samples_for_cycles(cycles, f_m, fs) {
        ensure(n <= samples.len(), || {
            Error::Windowing(format!("{cycles} cycles need {n} samples, record has {}", samples.len()))
        })?;
        let sum: f64 = samples[..n].iter().enumerate().map(|(i, x)| weight(i) * x).sum();
        return Ok(2.0 * sum / n as f64);
    }
    let span = cycles as f64 / f_m;
    let whole = (span * fs).floor() as usize;
    ensure(whole + 1 < samples.len(), || {
        Error::Windowing(format!("{cycles} cycles exceed the record of {} samples", samples.len()))
    })?;
    let dt = 1.0 / fs;
    let y = |i: usize| weight(i) * samples[i];
    let mut integral = 0.5 * (y(0) + y(whole));
    integral += (1..whole).map(y).sum::<f64>();
    integral *= dt;
    // Tail from whole·dt to span on the linear interpolant of x.
    let frac = span * fs - whole as f64;
    if frac > 0.0 {
        let x_end = samples[whole] + frac * (samples[whole + 1] - samples[whole]);
        let w_end = (TAU * freq * span + phase).cos();
        integral += 0.5 * frac * dt * (y(whole) + w_end * x_end);
    }
    Ok(2.0 * integral / span)
}

/// Coupling estimate from harmonic `k` of a per-unit-coupling-normalized field
/// record: `(2f_m/(c_k M a₁)) ∫₀^{M/f_m} cos(2πk f_m τ + kφ) b(τ) dτ`.
pub fn lockin_estimate_k(
    samples: &[f64],
    sample_rate: f64,
    k: usize,
    template: &HarmonicTemplate,
    phi: f64,
    cycles: usize,
) -> Result<f64> {
    let c = template.coefficient(k)?;
    let kf = k as f64;
    let p = windowed_projection(samples, sample_rate, template.f_m, cycles, kf * template.f_m, kf * phi)?;
    Ok(p / (c * template.a1))
}

/// `Σ c_k² g_k / Σ c_k²`.
pub fn weighted_combine(g: &[f64], c: &[f64]) -> Result<f64> {
    let w = weights(c, g.len())?;
    Ok(g.iter().zip(&w).map(|(g, w)| g * w).sum())
}

/// Standard error of [`weighted_combine`] for independent per-harmonic errors.
pub fn weighted_sigma(sigma: &[f64], c: &[f64]) -> Result<f64> {
    let w = weights(c, sigma.len())?;
    Ok(sigma.iter().zip(&w).map(|(s, w)| (s * w).powi(2)).sum::<f64>().sqrt())
}

fn weights(c: &[f64], len: usize) -> Result<Vec<f64>> {
    ensure(c.len() == len && len > 0, || {
        Error::Domain(format!("{len} estimates for {} coefficients", c.len()))
    })?;
    let total: f64 = c.iter().map(|c| c * c).sum();
    ensure(total > 0.0, || Error::Degenerate("all harmonic weights are zero".into()))?;
    Ok(c.iter().map(|c| c * c / total).collect())
}

/// Phase of the fundamental fitted from data, for diagnostics only.
pub fn fit_phase(samples: &[f64], sample_rate: f64, f_m: f64) -> Result<f64> {
    let periods = whole_periods(samples.len(), f_m, sample_rate)
        .ok_or_else(|| Error::Windowing("phase fit needs an integer number of cycles".into()))?;
    let n = samples_for_cycles(periods, f_m, sample_rate).unwrap_or(samples.len());
    let (c, s) = project(&samples[..n.min(samples.len())], sample_rate, 0.0, f_m);
    Ok((-s).atan2(c))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockEstimate {
    pub block_index: usize,
    /// Start of the block relative to the record start, s.
    pub start: f64,
    /// Integrated span, s; an integer number of modulation cycles.
    pub duration: f64,
    pub g_hat: f64,
    pub sigma: f64,
    pub g_k: Vec<f64>,
    pub sigma_k: Vec<f64>,
}

/// Voltage-domain demodulation: template plus the calibrated response that
/// maps field harmonics to output harmonics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Demodulator {
    pub template: HarmonicTemplate,
    pub response: SensorResponse,
}

impl Demodulator {
    pub fn new(template: HarmonicTemplate, response: SensorResponse) -> Result<Self> {
        for k in 1..=template.harmonics() {
            template.coefficient(k)?;
        }
        Ok(Demodulator { template, response })
    }

    /// Estimates over the first `cycles` modulation cycles of `samples`,
    /// whose first sample has fundamental phase `phi`.
    pub fn estimate(&self, samples: &[f64], fs: f64, phi: f64, cycles: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let t = &self.template;
        let kmax = t.harmonics();
        let mut inphase = Vec::with_capacity(kmax);
        let mut quad = Vec::with_capacity(kmax);
        for k in 1..=kmax {
            let f = k as f64 * t.f_m;
            let lag = self.response.lag(f);
            let ph = k as f64 * phi - lag;
            inphase.push(windowed_projection(samples, fs, t.f_m, cycles, f, ph)?);
            quad.push(windowed_projection(samples, fs, t.f_m, cycles, f, ph - TAU / 4.0)?);
        }

        // Residual after removing the fitted harmonics and the mean.
        let n = ((cycles as f64 / t.f_m) * fs).round() as usize;
        let n = n.min(samples.len());
        let mean = samples[..n].iter().sum::<f64>() / n as f64;
        let mut ss = 0.0;
        for (i, x) in samples[..n].iter().enumerate() {
            let mut model = mean;
            for k in 1..=kmax {
                let f = k as f64 * t.f_m;
                let arg = cycle_phase(f, i as f64 / fs) + k as f64 * phi - self.response.lag(f);
                model += inphase[k - 1] * arg.cos() + quad[k - 1] * arg.sin();
            }
            ss += (x - model).powi(2);
        }
        let dof = n.saturating_sub(2 * kmax + 1).max(1);
        let s = (ss / dof as f64).sqrt();

        let mut g = Vec::with_capacity(kmax);
        let mut sig = Vec::with_capacity(kmax);
        for k in 1..=kmax {
            let scale = t.c[k - 1] * self.response.gain(k as f64 * t.f_m) * t.a1;
            ensure(scale != 0.0 && scale.is_finite(), || Error::UndefinedHarmonic(k))?;
            g.push(inphase[k - 1] / scale);
            sig.push((2.0 / n as f64).sqrt() * s / scale.abs());
        }
        Ok((g, sig))
    }

    fn block(&self, samples: &[f64], fs: f64, phi: f64, cycles: usize, index: usize, start: f64) -> Result<BlockEstimate> {
        let (g_k, sigma_k) = self.estimate(samples, fs, phi, cycles)?;
        let c = &self.template.c;
        let g_hat = weighted_combine(&g_k, c)?;
        let sigma = weighted_sigma(&sigma_k, c)?.max(f64::MIN_POSITIVE);
        Ok(BlockEstimate { block_index: index, start, duration: cycles as f64 / self.template.f_m, g_hat, sigma, g_k, sigma_k })
    }

    /// Splits a run into blocks of about `block_duration` seconds, each an
    /// integer number of cycles, and estimates every block. `None` analyzes
    /// the whole run as one block.
    pub fn analyze_run(&self, run: &SyntheticRun, block_duration: Option<f64>) -> Result<Vec<BlockEstimate>> {
        let fs = run.sample_rate;
        let f_m = self.template.f_m;
        ensure((run.modulation_freq - f_m).abs() <= 1e-9 * f_m, || {
            Error::Config(format!(
                "run modulated at {} Hz analyzed with a {f_m} Hz template",
                run.modulation_freq
            ))
        })?;
        let total_cycles = (run.duration() * f_m + 1e-9).floor() as usize;
        let want = block_duration.map_or(total_cycles, |d| ((d * f_m) + 1e-9).floor() as usize);
        ensure(want >= 1 && want <= total_cycles, || {
            Error::Windowing(format!(
                "block of {want} cycles does not fit a record of {total_cycles} cycles"
            ))
        })?;
        // Prefer a cycle count with an integer number of samples.
        let step = (1..=want).find(|&c| samples_for_cycles(c, f_m, fs).is_some());
        let cycles = match step {
            Some(s) => want / s * s,
            None => want,
        };
        let phi0 = self.template.phase_at(run.encoder_start_angle);
        let span = cycles as f64 / f_m;
        let starts: Vec<usize> = match samples_for_cycles(cycles, f_m, fs) {
            Some(len) => (0..run.len() / len).map(|b| b * len).collect(),
            None => {
                let count = total_cycles / cycles;
                (0..count).map(|b| (b as f64 * span * fs).ceil() as usize).collect()
            }
        };
        starts
            .par_iter()
            .enumerate()
            .map(|(b, &i0)| {
                let start = i0 as f64 / fs;
                let phi = (phi0 + TAU * (f_m * start).fract()).rem_euclid(TAU);
                self.block(&run.output[i0..], fs, phi, cycles, b, start)
            })
            .filter(|r| !matches!(r, Err(Error::Windowing(_))))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Freedman–Diaconis bin width `2·IQR·n^(-1/3)`; Sturges count when the IQR vanishes.
    pub fn freedman_diaconis(values: &[f64]) -> Result<Self> {
        ensure(values.len() >= 2, || Error::TooFewBlocks(values.len()))?;
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let (lo, hi) = (v[0], v[v.len() - 1]);
        let n = v.len() as f64;
        let iqr = quantile(&v, 0.75) - quantile(&v, 0.25);
        let bins = if hi == lo {
            1
        } else if iqr > 0.0 {
            let h = 2.0 * iqr / n.cbrt();
            (((hi - lo) / h).ceil() as usize).clamp(1, 100_000)
        } else {
            (n.log2().ceil() as usize + 1).max(1)
        };
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let lo = if hi > lo { lo } else { lo - 0.5 };
        let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
        let mut counts = vec![0u64; bins];
        for x in &v {
            let i = (((x - lo) / width).floor() as usize).min(bins - 1);
            counts[i] += 1;
        }
        Ok(Histogram { edges, counts })
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub mu: f64,
    pub sigma: f64,
    pub chi2: f64,
    pub dof: usize,
    /// `chi2/dof`; absent when no degrees of freedom remain.
    pub reduced_chi2: Option<f64>,
}

/// Least-squares fit of `A·exp(−(x−μ)²/2s²)` to histogram counts with
/// Neyman weights `1/max(n, 1)`, by Levenberg–Marquardt.
pub fn fit_gaussian(hist: &Histogram) -> Option<GaussianFit> {
    let x = hist.centers();
    let y: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    if x.len() < 3 {
        return None;
    }
    let w: Vec<f64> = y.iter().map(|&n| 1.0 / n.max(1.0)).collect();
    let total: f64 = y.iter().sum();
    let mean = x.iter().zip(&y).map(|(x, y)| x * y).sum::<f64>() / total;
    let var = x.iter().zip(&y).map(|(x, y)| y * (x - mean).powi(2)).sum::<f64>() / total;
    let bin = hist.edges[1] - hist.edges[0];
    let mut p = [y.iter().cloned().fold(0.0, f64::max), mean, var.sqrt().max(bin)];

    let chi2 = |p: &[f64; 3]| -> f64 {
        x.iter().zip(&y).zip(&w).map(|((x, y), w)| w * (y - gauss(p, *x)).powi(2)).sum()
    };
    let mut cost = chi2(&p);
    let mut damping = 1e-3;
    for _ in 0..200 {
        // Normal equations JᵀWJ δ = JᵀW r.
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for ((&xi, &yi), &wi) in x.iter().zip(&y).zip(&w) {
            let e = gauss(&[1.0, p[1], p[2]], xi);
            let d = xi - p[1];
            let j = [e, p[0] * e * d / (p[2] * p[2]), p[0] * e * d * d / p[2].powi(3)];
            let r = yi - p[0] * e;
            for a in 0..3 {
                jtr[a] += wi * j[a] * r;
                for b in 0..3 {
                    jtj[a][b] += wi * j[a] * j[b];
                }
            }
        }
        let mut improved = false;
        while damping < 1e12 {
            let mut m = jtj;
            for (a, row) in m.iter_mut().enumerate() {
                row[a] *= 1.0 + damping;
            }
            let Some(delta) = solve3(m, jtr) else {
                damping *= 10.0;
                continue;
            };
            let trial = [p[0] + delta[0], p[1] + delta[1], (p[2] + delta[2]).abs()];
            let c = chi2(&trial);
            if c.is_finite() && c <= cost {
                let rel = (cost - c) / cost.max(f64::MIN_POSITIVE);
                p = trial;
                cost = c;
                damping = (damping / 10.0).max(1e-12);
                improved = rel > 1e-12;
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let dof = x.len() - 3;
    Some(GaussianFit {
        amplitude: p[0],
        mu: p[1],
        sigma: p[2],
        chi2: cost,
        dof,
        reduced_chi2: (dof > 0).then(|| cost / dof as f64),
    })
}

fn gauss(p: &[f64; 3], x: f64) -> f64 {
    p[0] * (-(x - p[1]).powi(2) / (2.0 * p[2] * p[2])).exp()
}

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        let mut mi = m;
        for r in 0..3 {
            mi[r][i] = b[r];
        }
        *o = det(&mi) / d;
    }
    Some(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockStatistics {
    pub blocks: usize,
    /// Inverse-variance weighted mean.
    pub mean: f64,
    pub stat_sigma: f64,
    pub histogram: Histogram,
    pub fit: Option<GaussianFit>,
}

pub fn block_statistics(estimates: &[BlockEstimate]) -> Result<BlockStatistics> {
    ensure(estimates.len() >= 2, || Error::TooFewBlocks(estimates.len()))?;
    let mut wsum = 0.0;
    let mut acc = 0.0;
    for e in estimates {
        ensure(e.sigma > 0.0 && e.sigma.is_finite(), || {
            Error::Degenerate(format!("block {} has non-positive sigma", e.block_index))
        })?;
        let w = 1.0 / (e.sigma * e.sigma);
        wsum += w;
        acc += w * e.g_hat;
    }
    let values: Vec<f64> = estimates.iter().map(|e| e.g_hat).collect();
    let histogram = Histogram::freedman_diaconis(&values)?;
    let fit = fit_gaussian(&histogram);
    Ok(BlockStatistics { blocks: estimates.len(), mean: acc / wsum, stat_sigma: wsum.sqrt().recip(), histogram, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{Channel, ForceRange};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn unit_template(c: Vec<f64>) -> HarmonicTemplate {
        HarmonicTemplate { f_m: 6.0, phi: 0.4, c, a1: 1.0, reference_angle: 0.0, symmetry_order: 2 }
    }

    fn series(b: Vec<f64>, fs: f64) -> FieldTimeSeries {
        FieldTimeSeries {
            times: (0..b.len()).map(|i| i as f64 / fs).collect(),
            b_per_coupling: b,
            lambda: ForceRange::INFINITE,
            channel: Channel::neutron_ne(),
            rotation_freq: 3.0,
            modulation_freq: 6.0,
            start_angle: 0.0,
            symmetry_order: 2,
        }
    }

    #[test]
    fn pure_cosine_template() {
        let fs = 600.0;
        let b: Vec<f64> = (0..600).map(|i| 3.0 * (TAU * 6.0 * i as f64 / fs + 0.2).cos()).collect();
        let t = fourier_coefficients(&series(b, fs), 3).unwrap();
        assert!((t.a1 - 3.0).abs() < 1e-12 && (t.phi - 0.2).abs() < 1e-12);
        assert!((t.c[0] - 1.0).abs() < 1e-12 && t.c[1].abs() < 1e-12 && t.c[2].abs() < 1e-12);
        let short = series(vec![1.0; 599], fs);
        assert!(matches!(fourier_coefficients(&short, 3), Err(Error::Windowing(_))));
    }

    #[test]
    fn time_shift_moves_phase_not_coefficients() {
        let fs = 600.0;
        let wave = |t: f64| (TAU * 6.0 * t).cos() + 0.09 * (TAU * 12.0 * t).cos() - 0.01 * (TAU * 18.0 * t).cos();
        let a = fourier_coefficients(&series((0..600).map(|i| wave(i as f64 / fs)).collect(), fs), 3).unwrap();
        let b = fourier_coefficients(&series((0..600).map(|i| wave(i as f64 / fs + 0.013)).collect(), fs), 3).unwrap();
        for (x, y) in a.c.iter().zip(&b.c) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(((b.phi - a.phi) - TAU * 6.0 * 0.013).abs() < 1e-9);
        assert!((a.c[1] - 0.09).abs() < 1e-12 && (a.c[2] + 0.01).abs() < 1e-12);
    }

    #[test]
    fn lockin_inverts_the_projection() {
        let fs = 200.0;
        let c = vec![1.0, 0.09, 0.01];
        let t = unit_template(c.clone());
        let g = 2.5;
        for k in 1..=3 {
            let b: Vec<f64> = (0..2000)
                .map(|i| g * c[k - 1] * (TAU * k as f64 * 6.0 * i as f64 / fs + k as f64 * t.phi).cos())
                .collect();
            let est = lockin_estimate_k(&b, fs, k, &t, t.phi, 60).unwrap();
            assert!((est - g).abs() < 1e-9 * g, "k={k} {est}");
            for j in (1..=3).filter(|&j| j != k) {
                let leak = lockin_estimate_k(&b, fs, j, &t, t.phi, 60).unwrap();
                assert!(leak.abs() < 1e-6 * g * c[k - 1] / c[j - 1], "{k}->{j}: {leak}");
            }
        }
    }

    #[test]
    fn interpolated_tail_is_accurate() {
        // 7 cycles at 6 Hz on 97 Hz sampling is not an integer sample count.
        let fs = 97.0;
        let t = unit_template(vec![1.0]);
        let b: Vec<f64> = (0..400).map(|i| (TAU * 6.0 * i as f64 / fs + t.phi).cos()).collect();
        let est = lockin_estimate_k(&b, fs, 1, &t, t.phi, 7).unwrap();
        assert!((est - 1.0).abs() < 5e-3, "{est}");
    }

    #[test]
    fn undefined_harmonic() {
        let t = unit_template(vec![1.0, 0.0]);
        assert!(matches!(lockin_estimate_k(&[0.0; 400], 200.0, 2, &t, 0.0, 1), Err(Error::UndefinedHarmonic(2))));
        assert!(matches!(lockin_estimate_k(&[0.0; 400], 200.0, 4, &t, 0.0, 1), Err(Error::UndefinedHarmonic(4))));
    }

    #[test]
    fn combination_examples() {
        assert!((weighted_combine(&[5.0, 5.0, 5.0], &[1.0, 0.3, 0.2]).unwrap() - 5.0).abs() < 1e-15);
        let g = weighted_combine(&[1.0, 0.0, 0.0], &[1.0, 0.09, 0.01]).unwrap();
        assert!((g - 0.99186).abs() < 1e-5, "{g}");
        assert_eq!(weighted_combine(&[0.7], &[0.3]).unwrap(), 0.7);
        assert!(matches!(weighted_combine(&[1.0, 2.0], &[0.0, 0.0]), Err(Error::Degenerate(_))));
        assert!(weighted_combine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn identical_blocks_statistics() {
        let e: Vec<BlockEstimate> = (0..9)
            .map(|i| BlockEstimate { block_index: i, start: 0.0, duration: 1.0, g_hat: 2.0, sigma: 0.3, g_k: vec![], sigma_k: vec![] })
            .collect();
        let s = block_statistics(&e).unwrap();
        assert!((s.mean - 2.0).abs() < 1e-15);
        assert!((s.stat_sigma - 0.1).abs() < 1e-15);
        assert!(matches!(block_statistics(&e[..1]), Err(Error::TooFewBlocks(1))));
    }

    #[test]
    fn gaussian_fit_recovers_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v: Vec<f64> = (0..20_000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                3.0 + 0.5 * z
            })
            .collect();
        let h = Histogram::freedman_diaconis(&v).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), 20_000);
        let fit = fit_gaussian(&h).unwrap();
        assert!((fit.mu - 3.0).abs() < 0.02 && (fit.sigma - 0.5).abs() < 0.02, "{fit:?}");
        let r = fit.reduced_chi2.unwrap();
        assert!((0.5..2.0).contains(&r), "{r}");
    }

    #[test]
    fn histogram_degenerate_inputs() {
        let h = Histogram::freedman_diaconis(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(h.counts, vec![3]);
        assert!(fit_gaussian(&h).is_none());
    }

    proptest::proptest! {
        #[test]
        fn combination_is_scale_free(k in 1e-3f64..1e3, g1 in -5.0f64..5.0, g2 in -5.0f64..5.0, g3 in -5.0f64..5.0) {
            let g = [g1, g2, g3];
            let c = [1.0, 0.09, 0.01];
            let a = weighted_combine(&g, &c).unwrap();
            let b = weighted_combine(&g, &c.map(|c| c * k)).unwrap();
            proptest::prop_assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn template_phase_wraps(angle in 0.0f64..TAU) {
            let t = unit_template(vec![1.0]);
            let p = t.phase_at(angle);
            proptest::prop_assert!((0.0..TAU).contains(&p));
            let q = t.phase_at(angle + TAU);
            proptest::prop_assert!(((p - q).abs() < 1e-9) || ((p - q).abs() - TAU).abs() < 1e-9);
        }
    }
}
