//! Comagnetometer response: normalized HSR and NMR amplitude shapes, the
//! calibrated field-to-voltage conversion, bandwidth and disturbance
//! rejection.
//!
//! Every formula is evaluated with angular frequency ω = 2πf in rad/s;
//! public functions take and return cyclic frequency in Hz. The HSR shape is
//!
//! ```text
//! A(ω) = ωQ / √((R₂ᵉω)² + ((ωQ)² − γₑγₙB_zᵉB_zⁿ)²)
//! ```
//!
//! which peaks exactly at ω₀ = √(γₑγₙB_zᵉB_zⁿ)/Q with value Q/R₂ᵉ. Curve
//! shapes carry no absolute scale; the output gain comes only from `k_by_n`.
//!
//! Decibels are `10·log10` of amplitude ratios; the band edge is where the
//! amplitude falls to `10^(-3/10)` of its peak.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::error::{ensure, Error, Result};
use crate::field::{uniform_rate, FieldTimeSeries};
use crate::series::{whole_periods, PeriodicSignal};

/// Band-edge amplitude ratio for −3 dB.
pub const MINUS_3DB: f64 = 0.501_187_233_627_272_3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Hsr,
    Nmr,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Hsr => "HSR",
            Regime::Nmr => "NMR",
        }
    }
}

/// How the phase lag varies away from the calibration frequency.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseMode {
    /// Calibrated gain and phase at `f_cal`, extrapolated with the HSR transfer function.
    #[default]
    TransferFunction,
    /// Calibrated gain and phase applied unchanged at every frequency.
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResponseParams {
    /// Alkali transverse relaxation rate, 1/s.
    pub r2_e: f64,
    /// Noble-gas transverse relaxation rate, 1/s.
    pub r2_n: f64,
    /// Slowing-down factor.
    pub q: f64,
    /// Field seen by the alkali spins, T.
    pub bz_e: f64,
    /// Field seen by the noble-gas spins, T.
    pub bz_n: f64,
    /// Residual field in the NMR regime, T.
    pub bz_eff: f64,
    /// rad/s/T.
    pub gamma_e: f64,
    /// rad/s/T.
    pub gamma_n: f64,
    /// Calibrated output per field, V/T.
    pub k_by_n: f64,
    /// Calibrated phase lag at `f_cal`, rad.
    pub phi_cal: f64,
    /// Hz.
    pub f_cal: f64,
    pub phase_mode: PhaseMode,
}

impl Default for ResponseParams {
    fn default() -> Self {
        let c = PhysicalConstants::CODATA;
        ResponseParams {
            r2_e: 3900.0,
            r2_n: 0.005,
            q: 7.6,
            bz_e: 83e-9,
            bz_n: 468e-9,
            bz_eff: 1.8e-12,
            gamma_e: c.gamma_e,
            gamma_n: c.gamma_n,
            k_by_n: 0.193e-6 / 1e-15,
            phi_cal: 10.1f64.to_radians(),
            f_cal: 6.0,
            phase_mode: PhaseMode::TransferFunction,
        }
    }
}

impl ResponseParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("r2_e", self.r2_e),
            ("r2_n", self.r2_n),
            ("q", self.q),
            ("bz_e", self.bz_e),
            ("bz_n", self.bz_n),
            ("gamma_e", self.gamma_e),
            ("gamma_n", self.gamma_n),
            ("k_by_n", self.k_by_n),
            ("f_cal", self.f_cal),
        ];
        for (name, v) in positive {
            ensure(v.is_finite() && v > 0.0, || {
                Error::Config(format!("response.{name} must be positive, got {v}"))
            })?;
        }
        ensure(self.bz_eff.is_finite() && self.bz_eff >= 0.0, || {
            Error::Config("response.bz_eff must be non-negative".into())
        })?;
        ensure(self.phi_cal.is_finite(), || Error::Config("response.phi_cal must be finite".into()))
    }

    /// HSR resonance ω₀², (rad/s)².
    fn omega0_sq(&self) -> f64 {
        self.gamma_e * self.gamma_n * self.bz_e * self.bz_n / (self.q * self.q)
    }

    /// Peak frequency of the HSR shape, Hz.
    pub fn hsr_resonance(&self) -> f64 {
        self.omega0_sq().sqrt() / TAU
    }

    /// Peak frequency of the NMR shape, Hz.
    pub fn nmr_resonance(&self) -> f64 {
        self.gamma_n * self.bz_eff / TAU
    }

    pub fn resonance(&self, regime: Regime) -> f64 {
        match regime {
            Regime::Hsr => self.hsr_resonance(),
            Regime::Nmr => self.nmr_resonance(),
        }
    }
}

fn check_freq(f: f64) -> Result<()> {
    ensure(f.is_finite() && f > 0.0, || Error::Domain(format!("frequency must be positive, got {f} Hz")))
}

fn hsr_raw(f: f64, p: &ResponseParams) -> f64 {
    let w = TAU * f;
    let wq = w * p.q;
    let detune = wq * wq - p.gamma_e * p.gamma_n * p.bz_e * p.bz_n;
    (wq / (p.r2_e * w).hypot(detune)).abs()
}

fn nmr_raw(f: f64, p: &ResponseParams) -> f64 {
    1.0 / p.r2_n.hypot(TAU * f - p.gamma_n * p.bz_eff)
}

fn raw(regime: Regime, f: f64, p: &ResponseParams) -> f64 {
    match regime {
        Regime::Hsr => hsr_raw(f, p),
        Regime::Nmr => nmr_raw(f, p),
    }
}

/// Unnormalized HSR shape, s.
pub fn hsr_amplitude(f: f64, p: &ResponseParams) -> Result<f64> {
    check_freq(f)?;
    Ok(hsr_raw(f, p))
}

/// Unnormalized NMR shape, s.
pub fn nmr_amplitude(f: f64, p: &ResponseParams) -> Result<f64> {
    check_freq(f)?;
    Ok(nmr_raw(f, p))
}

pub fn amplitude(regime: Regime, f: f64, p: &ResponseParams) -> Result<f64> {
    check_freq(f)?;
    Ok(raw(regime, f, p))
}

/// Peak value of the unnormalized shape.
pub fn peak_amplitude(regime: Regime, p: &ResponseParams) -> f64 {
    match regime {
        Regime::Hsr => p.q / p.r2_e,
        Regime::Nmr => 1.0 / p.r2_n,
    }
}

/// Complex HSR transfer function `iωQ / (Q²(ω₀² − ω²) + iR₂ᵉω)`; |H| equals the HSR shape.
pub fn hsr_transfer(f: f64, p: &ResponseParams) -> (f64, f64) {
    let w = TAU * f;
    let re_d = p.q * p.q * (p.omega0_sq() - w * w);
    let im_d = p.r2_e * w;
    let den = re_d * re_d + im_d * im_d;
    let num = w * p.q;
    // iN / (a + ib) = N(b + ia) / (a² + b²)
    (num * im_d / den, num * re_d / den)
}

fn hsr_arg(f: f64, p: &ResponseParams) -> f64 {
    let (re, im) = hsr_transfer(f, p);
    im.atan2(re)
}

/// Normalized amplitude curve, peak value 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseCurve {
    pub regime: Regime,
    pub freqs: Vec<f64>,
    pub amplitude: Vec<f64>,
}

impl ResponseCurve {
    pub fn sweep(regime: Regime, freqs: &[f64], p: &ResponseParams) -> Result<Self> {
        p.validate()?;
        for &f in freqs {
            check_freq(f)?;
        }
        let peak = peak_amplitude(regime, p);
        let amplitude = freqs.par_iter().map(|&f| raw(regime, f, p) / peak).collect();
        Ok(ResponseCurve { regime, freqs: freqs.to_vec(), amplitude })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("frequency_hz,amplitude_normalized,regime\n");
        for (f, a) in self.freqs.iter().zip(&self.amplitude) {
            out.push_str(&format!("{f:.9e},{a:.9e},{}\n", self.regime.name()));
        }
        out
    }
}

/// Full −3 dB width, Hz. For NMR the width is taken in detuning about the
/// resonance, so the band may extend below zero frequency.
pub fn bandwidth_3db(regime: Regime, p: &ResponseParams) -> Result<f64> {
    p.validate()?;
    match regime {
        Regime::Hsr => {
            // Band edges solve Q²ω − W²/ω = ±R₂ᵉ·c.
            let c = (MINUS_3DB.powi(-2) - 1.0).sqrt();
            let w2 = p.omega0_sq() * p.q * p.q;
            let edge = |s: f64| {
                let b = s * p.r2_e * c;
                (b + (b * b + 4.0 * p.q * p.q * w2).sqrt()) / (2.0 * p.q * p.q)
            };
            let lo = edge(-1.0);
            let hi = edge(1.0);
            // Cross-check against the curve itself.
            let peak = peak_amplitude(regime, p);
            for w in [lo, hi] {
                let a = hsr_raw(w / TAU, p) / peak;
                ensure((a - MINUS_3DB).abs() < 1e-9, || {
                    Error::NonConvergence { achieved: a, requested: MINUS_3DB }
                })?;
            }
            Ok((hi - lo) / TAU)
        }
        Regime::Nmr => {
            let half = p.r2_n * (MINUS_3DB.powi(-2) - 1.0).sqrt();
            Ok(2.0 * half / TAU)
        }
    }
}

/// Resonance shift caused by a field deviation, Hz.
pub fn field_deviation_to_detuning(delta_b: f64, regime: Regime, p: &ResponseParams) -> f64 {
    match regime {
        Regime::Nmr => p.gamma_n / TAU * delta_b,
        Regime::Hsr => p.hsr_resonance() * delta_b / (2.0 * p.bz_n),
    }
}

/// Relative change `|A(f0) − A(f0+Δf)|/A(f0)` of the unnormalized shape.
pub fn rejection_ratio(f0: f64, delta_f: f64, regime: Regime, p: &ResponseParams) -> Result<f64> {
    rejection_ratio_with(f0, delta_f, |f| raw(regime, f, p))
}

/// Same as [`rejection_ratio`] for an arbitrary amplitude function.
pub fn rejection_ratio_with(f0: f64, delta_f: f64, a: impl Fn(f64) -> f64) -> Result<f64> {
    check_freq(f0)?;
    check_freq(f0 + delta_f)?;
    let a0 = a(f0);
    ensure(a0 > 0.0 && a0.is_finite(), || {
        Error::Degenerate(format!("amplitude at operating point {f0} Hz is {a0}"))
    })?;
    Ok((a0 - a(f0 + delta_f)).abs() / a0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectionSummary {
    pub delta_b: Vec<f64>,
    pub eta_hsr: Vec<f64>,
    pub eta_nmr: Vec<f64>,
    /// `10·log10(mean Δη_NMR / mean Δη_HSR)`, dB.
    pub improvement_db: f64,
}

/// Δη for both regimes over `n` log-spaced field deviations in `[lo, hi]` T,
/// each regime operated at its own resonance.
pub fn rejection_improvement(p: &ResponseParams, lo: f64, hi: f64, n: usize) -> Result<RejectionSummary> {
    p.validate()?;
    let delta_b = crate::series::log_grid(lo, hi, n)?;
    let eta = |regime: Regime| -> Result<Vec<f64>> {
        let f0 = p.resonance(regime);
        delta_b
            .iter()
            .map(|&db| rejection_ratio(f0, field_deviation_to_detuning(db, regime, p), regime, p))
            .collect()
    };
    let eta_hsr = eta(Regime::Hsr)?;
    let eta_nmr = eta(Regime::Nmr)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mh, mn) = (mean(&eta_hsr), mean(&eta_nmr));
    ensure(mh > 0.0, || Error::Degenerate("HSR rejection ratio vanishes over the range".into()))?;
    Ok(RejectionSummary { improvement_db: 10.0 * (mn / mh).log10(), delta_b, eta_hsr, eta_nmr })
}

/// Calibrated field-to-voltage conversion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SensorResponse {
    pub params: ResponseParams,
}

impl SensorResponse {
    pub fn new(params: ResponseParams) -> Result<Self> {
        params.validate()?;
        Ok(SensorResponse { params })
    }

    /// Output amplitude per field amplitude at `f`, V/T. Zero at DC in
    /// transfer-function mode.
    pub fn gain(&self, f: f64) -> f64 {
        let p = &self.params;
        match p.phase_mode {
            PhaseMode::Constant => p.k_by_n,
            PhaseMode::TransferFunction if f <= 0.0 => 0.0,
            PhaseMode::TransferFunction => p.k_by_n * hsr_raw(f, p) / hsr_raw(p.f_cal, p),
        }
    }

    /// Phase lag of the output behind the field at `f`, rad.
    pub fn lag(&self, f: f64) -> f64 {
        let p = &self.params;
        match p.phase_mode {
            PhaseMode::Constant => p.phi_cal,
            PhaseMode::TransferFunction if f <= 0.0 => 0.0,
            PhaseMode::TransferFunction => p.phi_cal + hsr_arg(p.f_cal, p) - hsr_arg(f, p),
        }
    }

    /// Lag expressed as a delay `lag/ω` at `f`, s.
    pub fn time_delay(&self, f: f64) -> Result<f64> {
        check_freq(f)?;
        Ok(self.lag(f) / (TAU * f))
    }

    /// Output Fourier series for a field Fourier series.
    pub fn respond(&self, field: &PeriodicSignal) -> PeriodicSignal {
        field.filtered(|f| (self.gain(f), self.lag(f)))
    }
}

/// Sensor output on the field's time grid, V, for coupling `g_product`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputSeries {
    pub times: Vec<f64>,
    pub volts: Vec<f64>,
}

/// Applies gain and phase harmonic by harmonic. The field's Fourier series
/// is taken over the longest prefix spanning whole rotor periods and the
/// output is rendered on every input time.
pub fn apply_response(
    field: &FieldTimeSeries,
    g_product: f64,
    response: &SensorResponse,
) -> Result<OutputSeries> {
    let fs = uniform_rate(&field.times)?;
    let per_period = fs / field.rotation_freq;
    let periods = (field.len() as f64 / per_period + 1e-9).floor() as usize;
    ensure(periods >= 1, || Error::Windowing("field series shorter than one rotor period".into()))?;
    let n = (periods as f64 * per_period).round() as usize;
    ensure(whole_periods(n, field.rotation_freq, fs).is_some(), || {
        Error::Windowing("rotor period is not an integer number of samples".into())
    })?;
    let max_order = (n - 1) / (2 * periods);
    let t0 = field.times[0];
    let sig = PeriodicSignal::from_samples(&field.b_per_coupling[..n], fs, t0, field.rotation_freq, max_order)?;
    let out = response.respond(&sig.scaled(g_product));
    Ok(OutputSeries { times: field.times.clone(), volts: out.render(t0, fs, field.len()) })
}
