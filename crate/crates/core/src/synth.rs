//! Synthetic sensor output: response-filtered exotic signal, white floor and
//! attenuated vibration pickup.
//!
//! Noise comes from ChaCha8 seeded with `seed`: stream 1 draws the white
//! floor and broadband vibration sample by sample in that order, stream 2
//! draws the encoder angle noise. The output is a pure function of
//! `(field, g_true, response, noise, spec)`.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::field::FieldTimeSeries;
use crate::response::SensorResponse;
use crate::series::{Harmonic, PeriodicSignal};

/// A coherent vibration line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VibrationLine {
    /// Hz.
    pub freq: f64,
    /// Raw velocity amplitude before isolation, m/s/√Hz taken over a 1 Hz bin.
    pub velocity: f64,
    /// Phase at t = 0, rad.
    #[serde(default)]
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// White output floor, V/√Hz (one-sided).
    pub white_psd: f64,
    pub vibration_lines: Vec<VibrationLine>,
    /// Raw broadband vibration, m/s/√Hz (one-sided).
    pub vibration_broadband: f64,
    /// Field per platform velocity, T/(m/s).
    pub vib_to_field_coeff: f64,
    pub attenuation_stages: Vec<f64>,
}

/// Field pickup per residual velocity, T/(m/s).
pub const DEFAULT_VIB_TO_FIELD: f64 = 3.2687e-9;

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            white_psd: 0.0,
            vibration_lines: vec![VibrationLine { freq: 6.0, velocity: 3.9e-7, phase: 0.0 }],
            vibration_broadband: 0.0,
            vib_to_field_coeff: DEFAULT_VIB_TO_FIELD,
            attenuation_stages: vec![7.0, 100.0],
        }
    }
}

impl NoiseModel {
    /// No noise of any kind.
    pub fn silent() -> Self {
        NoiseModel { vibration_lines: Vec::new(), ..Self::default() }
    }

    /// White floor only.
    pub fn white(white_psd: f64) -> Self {
        NoiseModel { white_psd, ..Self::silent() }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.white_psd.is_finite() && self.white_psd >= 0.0, || {
            Error::Config("noise.white_psd must be non-negative".into())
        })?;
        ensure(self.vibration_broadband.is_finite() && self.vibration_broadband >= 0.0, || {
            Error::Config("noise.vibration_broadband must be non-negative".into())
        })?;
        ensure(self.vib_to_field_coeff.is_finite(), || {
            Error::Config("noise.vib_to_field_coeff must be finite".into())
        })?;
        for l in &self.vibration_lines {
            ensure(l.freq > 0.0 && l.freq.is_finite() && l.velocity.is_finite() && l.phase.is_finite(), || {
                Error::Config(format!("invalid vibration line at {} Hz", l.freq))
            })?;
        }
        total_attenuation(self).map(|_| ())
    }
}

/// Product of the isolation stages.
pub fn total_attenuation(model: &NoiseModel) -> Result<f64> {
    ensure(!model.attenuation_stages.is_empty(), || {
        Error::Config("at least one attenuation stage is required".into())
    })?;
    model.attenuation_stages.iter().try_fold(1.0, |acc, &s| {
        ensure(s.is_finite() && s >= 1.0, || {
            Error::Config(format!("attenuation factor {s} is below 1"))
        })?;
        Ok(acc * s)
    })
}

/// Field amplitude of a vibration line after isolation, T.
pub fn residual_line_field(model: &NoiseModel, line: &VibrationLine) -> Result<f64> {
    Ok(model.vib_to_field_coeff * line.velocity / total_attenuation(model)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    /// s.
    pub duration: f64,
    /// Hz.
    pub sample_rate: f64,
    /// Start time of the record on the field's clock, s.
    pub t0: f64,
    /// Retained harmonics of the modulation frequency.
    pub harmonics: usize,
    /// Encoder angle noise (1σ), rad.
    pub encoder_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec { duration: 100.0, sample_rate: 200.0, t0: 0.0, harmonics: 3, encoder_sigma: 4.9e-6, seed: 0 }
    }
}

/// Minimum ratio of sample rate to the highest retained signal frequency.
pub const OVERSAMPLING: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRun {
    pub t0: f64,
    pub sample_rate: f64,
    /// V.
    pub output: Vec<f64>,
    pub truth_coupling: f64,
    pub seed: u64,
    pub rotation_freq: f64,
    pub modulation_freq: f64,
    pub symmetry_order: usize,
    /// Encoder reading of the block-0 rotor angle at the first sample, rad.
    pub encoder_start_angle: f64,
}

impl SyntheticRun {
    pub fn len(&self) -> usize {
        self.output.len()
    }

    pub fn is_empty(&self) -> bool {
        self.output.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 / self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.len() * 36);
        out.push_str("t_s,output_V\n");
        for (i, v) in self.output.iter().enumerate() {
            out.push_str(&format!("{:.9e},{v:.9e}\n", self.time(i)));
        }
        out
    }
}

/// Field waveform per unit coupling, truncated to the retained modulation harmonics.
pub fn retained_signal(field: &FieldTimeSeries, harmonics: usize) -> Result<PeriodicSignal> {
    let rotor = field.rotor_harmonics()?;
    let n = field.symmetry_order;
    let max_order = harmonics * n;
    ensure(rotor.max_order() >= max_order, || {
        Error::Windowing(format!(
            "field grid resolves rotor order {} but {max_order} is requested",
            rotor.max_order()
        ))
    })?;
    let kept = rotor.harmonics.into_iter().filter(|h| h.order % n == 0 && h.order <= max_order);
    Ok(PeriodicSignal {
        fundamental: field.modulation_freq,
        dc: rotor.dc,
        harmonics: kept.map(|h| Harmonic { order: h.order / n, ..h }).collect(),
    })
}

/// Generates one synthetic record.
pub fn synthesize(
    field: &FieldTimeSeries,
    g_true: f64,
    response: &SensorResponse,
    noise: &NoiseModel,
    spec: &SynthSpec,
) -> Result<SyntheticRun> {
    noise.validate()?;
    ensure(spec.duration > 0.0 && spec.sample_rate > 0.0 && spec.harmonics >= 1, || {
        Error::Config("synth duration, sample rate and harmonics must be positive".into())
    })?;
    ensure(g_true.is_finite(), || Error::Config("g_true must be finite".into()))?;
    let highest = noise
        .vibration_lines
        .iter()
        .map(|l| l.freq)
        .fold(spec.harmonics as f64 * field.modulation_freq, f64::max);
    ensure(spec.sample_rate >= OVERSAMPLING * highest * (1.0 - 1e-12), || {
        Error::Config(format!(
            "sample rate {} Hz is below {OVERSAMPLING}× the highest retained frequency {highest} Hz",
            spec.sample_rate
        ))
    })?;
    let n = (spec.duration * spec.sample_rate).round() as usize;
    ensure(n >= 2, || Error::Config("synth record must hold at least two samples".into()))?;

    // Sample i sits at spec.t0 + i/fs on the field's clock.
    let signal = retained_signal(field, spec.harmonics)?.scaled(g_true);
    let mut output = response.respond(&signal).render(spec.t0, spec.sample_rate, n);

    let attenuation = total_attenuation(noise)?;
    for line in &noise.vibration_lines {
        let amp = residual_line_field(noise, line)? * response.gain(line.freq);
        let phase = line.phase - response.lag(line.freq);
        let w = TAU * line.freq;
        for (i, v) in output.iter_mut().enumerate() {
            *v += amp * (w * (spec.t0 + i as f64 / spec.sample_rate) + phase).cos();
        }
    }

    // One-sided density S gives per-sample σ = S·√(fs/2).
    let root = (spec.sample_rate / 2.0).sqrt();
    let white_sigma = noise.white_psd * root;
    let vib_sigma = noise.vibration_broadband * noise.vib_to_field_coeff / attenuation
        * response.params.k_by_n
        * root;
    if white_sigma > 0.0 || vib_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(1);
        for v in output.iter_mut() {
            if white_sigma > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += white_sigma * z;
            }
            if vib_sigma > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += vib_sigma * z;
            }
        }
    }

    let mut enc = ChaCha8Rng::seed_from_u64(spec.seed);
    enc.set_stream(2);
    let enc_noise = if spec.encoder_sigma > 0.0 {
        let z: f64 = StandardNormal.sample(&mut enc);
        spec.encoder_sigma * z
    } else {
        0.0
    };
    let true_angle = field.start_angle + TAU * field.rotation_freq * (spec.t0 - field.times[0]);
    Ok(SyntheticRun {
        t0: spec.t0,
        sample_rate: spec.sample_rate,
        output,
        truth_coupling: g_true,
        seed: spec.seed,
        rotation_freq: field.rotation_freq,
        modulation_freq: field.modulation_freq,
        symmetry_order: field.symmetry_order,
        encoder_start_angle: (true_angle + enc_noise).rem_euclid(TAU),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{Channel, ForceRange};
    use crate::field::{identical_blocks, FieldEngine};
    use crate::kinematics::{MassBlock, RotorConfig};
    use crate::series::project;

    fn field() -> FieldTimeSeries {
        let c = RotorConfig::default();
        let blocks = identical_blocks(&c, &MassBlock::lead(0.1, 4).unwrap());
        FieldEngine::default()
            .one_period(&c, &blocks, ForceRange::new(5.0).unwrap(), &Channel::neutron_ne(), 64)
            .unwrap()
    }

    fn spec(duration: f64) -> SynthSpec {
        SynthSpec { duration, ..SynthSpec::default() }
    }

    #[test]
    fn attenuation_products() {
        let m = |s: Vec<f64>| NoiseModel { attenuation_stages: s, ..NoiseModel::default() };
        assert_eq!(total_attenuation(&m(vec![7.0, 100.0])).unwrap(), 700.0);
        assert_eq!(total_attenuation(&m(vec![1.0])).unwrap(), 1.0);
        assert_eq!(total_attenuation(&m(vec![2.0, 3.0, 4.0])).unwrap(), 24.0);
        assert!(matches!(total_attenuation(&m(vec![0.5])), Err(Error::Config(_))));
        assert!(total_attenuation(&m(vec![])).is_err());
    }

    #[test]
    fn null_case_is_identically_zero() {
        let run = synthesize(&field(), 0.0, &SensorResponse::default(), &NoiseModel::silent(), &spec(10.0)).unwrap();
        assert_eq!(run.len(), 2000);
        assert!(run.output.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn doubling_coupling_doubles_the_line() {
        let f = field();
        let r = SensorResponse::default();
        let line = |g: f64| {
            let run = synthesize(&f, g, &r, &NoiseModel::silent(), &spec(1.0)).unwrap();
            let (c, s) = project(&run.output, run.sample_rate, 0.0, 6.0);
            c.hypot(s)
        };
        let a = line(1e-38);
        assert!(a > 0.0);
        assert!((line(2e-38) / a - 2.0).abs() < 1e-12);
    }

    #[test]
    fn vibration_line_is_attenuated_by_the_total() {
        let f = field();
        let r = SensorResponse::default();
        let base = NoiseModel::default();
        let raw = NoiseModel { attenuation_stages: vec![1.0], ..base.clone() };
        let amp = |m: &NoiseModel| {
            let run = synthesize(&f, 0.0, &r, m, &spec(1.0)).unwrap();
            let (c, s) = project(&run.output, run.sample_rate, 0.0, 6.0);
            c.hypot(s)
        };
        assert!((amp(&raw) / amp(&base) - 700.0).abs() < 1e-9);
        let expected = DEFAULT_VIB_TO_FIELD * 3.9e-7 / 700.0 * r.gain(6.0);
        assert!((amp(&base) - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn aliasing_guard() {
        let s = SynthSpec { sample_rate: 150.0, ..spec(1.0) };
        let err = synthesize(&field(), 1e-38, &SensorResponse::default(), &NoiseModel::silent(), &s).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn seeded_runs_are_bitwise_reproducible() {
        let f = field();
        let r = SensorResponse::default();
        let n = NoiseModel { white_psd: 1e-6, vibration_broadband: 1e-6, ..NoiseModel::default() };
        let a = synthesize(&f, 1e-38, &r, &n, &SynthSpec { seed: 9, ..spec(5.0) }).unwrap();
        let b = synthesize(&f, 1e-38, &r, &n, &SynthSpec { seed: 9, ..spec(5.0) }).unwrap();
        let c = synthesize(&f, 1e-38, &r, &n, &SynthSpec { seed: 10, ..spec(5.0) }).unwrap();
        assert!(a.output.iter().zip(&b.output).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.encoder_start_angle.to_bits(), b.encoder_start_angle.to_bits());
        assert!(a.output != c.output);
    }

    #[test]
    fn white_floor_matches_configured_density() {
        let psd = 3e-7;
        let run = synthesize(
            &field(),
            0.0,
            &SensorResponse::default(),
            &NoiseModel::white(psd),
            &SynthSpec { duration: 100.0, sample_rate: 1000.0, seed: 4, ..SynthSpec::default() },
        )
        .unwrap();
        let est = crate::spectrum::welch(&run.output, 1000.0, 1000).unwrap().mean_asd(1.0, 499.0).unwrap();
        assert!(((est - psd) / psd).abs() < 0.1, "{est} {psd}");
    }

    #[test]
    fn retained_signal_keeps_modulation_harmonics() {
        let f = field();
        let sig = retained_signal(&f, 3).unwrap();
        assert_eq!(sig.fundamental, 6.0);
        assert_eq!(sig.harmonics.iter().map(|h| h.order).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(retained_signal(&f, 40).is_err());
    }

    #[test]
    fn encoder_angle_tracks_start_time() {
        let f = field();
        let s = SynthSpec { t0: 0.25, encoder_sigma: 0.0, ..spec(1.0) };
        let run = synthesize(&f, 1e-38, &SensorResponse::default(), &NoiseModel::silent(), &s).unwrap();
        let expected = (TAU * 3.0 * 0.25f64).rem_euclid(TAU);
        assert!((run.encoder_start_angle - expected).abs() < 1e-12);
    }
}
