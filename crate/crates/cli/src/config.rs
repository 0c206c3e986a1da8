//! Run configuration: parsing, validation and the canonical fingerprint.

use std::path::{Path, PathBuf};

use pvsearch_core::field::QuadratureSpec;
use pvsearch_core::inference::{log_grid, BudgetContext, ConversionAnchor, ForwardModel, SensitivityMode};
use pvsearch_core::kinematics::LEAD_DENSITY;
use pvsearch_core::response::{ResponseParams, SensorResponse};
use pvsearch_core::synth::{NoiseModel, SynthSpec, VibrationLine, DEFAULT_VIB_TO_FIELD};
use pvsearch_core::{Channel, ForceRange, MassBlock, PhysicalConstants, RotorConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// The only schema version this build reads.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub config_version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Not part of the fingerprint.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub rotor: RotorConfig,
    #[serde(default)]
    pub source: SourceConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub response: ResponseParams,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(default)]
    pub budget: BudgetConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("pvsearch-out")
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            config_version: CONFIG_VERSION,
            seed: 0,
            output_dir: default_output_dir(),
            rotor: RotorConfig::default(),
            source: SourceConfig::default(),
            simulate: SimulateConfig::default(),
            response: ResponseParams::default(),
            noise: NoiseConfig::default(),
            synth: SynthConfig::default(),
            analysis: AnalysisConfig::default(),
            inference: InferenceConfig::default(),
            budget: BudgetConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    /// kg/m³.
    pub density_kg_m3: f64,
    pub quadrature: QuadratureSpec,
    /// Field samples per rotor period for the forward template.
    pub samples_per_period: usize,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig { density_kg_m3: LEAD_DENSITY, quadrature: QuadratureSpec::default(), samples_per_period: 120 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub lambda_m: f64,
    /// Length of the emitted field record, s.
    pub duration_s: f64,
    pub sample_rate_hz: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { lambda_m: 5.0, duration_s: 10.0, sample_rate_hz: 200.0 }
    }
}

/// Output floor and platform vibration, in the units the sensor sees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Field-equivalent white floor, T/√Hz; converted to volts with the gain at f_m.
    pub field_floor_t_rthz: f64,
    pub vibration_lines: Vec<VibrationLine>,
    /// m/s/√Hz.
    pub vibration_broadband: f64,
    /// T/(m/s).
    pub vib_to_field_coeff: f64,
    pub attenuation_stages: Vec<f64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        let base = NoiseModel::default();
        NoiseConfig {
            field_floor_t_rthz: 2.62e-15,
            vibration_lines: base.vibration_lines,
            vibration_broadband: 0.0,
            vib_to_field_coeff: DEFAULT_VIB_TO_FIELD,
            attenuation_stages: base.attenuation_stages,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub t0_s: f64,
    pub g_true: f64,
    /// rad.
    pub encoder_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let s = SynthSpec::default();
        SynthConfig { duration_s: 600.0, sample_rate_hz: s.sample_rate, t0_s: 0.0, g_true: 0.0, encoder_sigma: s.encoder_sigma }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub harmonics: usize,
    /// Omit to analyze the record as a single block.
    pub block_length_s: Option<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig { harmonics: 3, block_length_s: Some(60.0) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LambdaGrid {
    pub min_m: f64,
    pub max_m: f64,
    pub points: usize,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid { min_m: 0.03, max_m: 400.0, points: 60 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    /// `neutron`, `proton-ne`, `proton-rb` or `electron`.
    pub channel: String,
    /// Range at which field amplitudes are converted to couplings, m.
    pub lambda_ref_m: f64,
    pub lambda_grid: LambdaGrid,
    pub confidence: f64,
    /// Convert fields with `anchor` instead of the bare forward model.
    pub anchored: bool,
    pub anchor: ConversionAnchor,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            channel: "neutron".into(),
            lambda_ref_m: 5.0,
            lambda_grid: LambdaGrid::default(),
            confidence: 0.95,
            anchored: true,
            anchor: ConversionAnchor::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetConfig {
    /// Central coupling the relative rows scale; defaults to the measured value.
    pub g_central: Option<f64>,
    /// Quadrature amplitude for the phase row; defaults to the measured stat error.
    pub phase_quadrature: Option<f64>,
    pub mass_nominal_kg: f64,
    pub mode: SensitivityMode,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        BudgetConfig { g_central: None, phase_quadrature: None, mass_nominal_kg: 12.0, mode: SensitivityMode::OneSigma }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> CliResult<Self> {
        // Version first, so an old file fails on the version rather than a renamed key.
        let raw: toml::Table = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        match raw.get("config_version") {
            None => return Err(bad("missing required key `config_version`")),
            Some(toml::Value::Integer(v)) if *v == i64::from(CONFIG_VERSION) => {}
            Some(v) => {
                return Err(bad(format!("config_version = {v} is not supported (expected {CONFIG_VERSION})")))
            }
        }
        let cfg: RunConfig = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        self.rotor.validate()?;
        self.source.quadrature.validate()?;
        self.response.validate()?;
        self.noise_model()?.validate()?;
        self.channel()?;
        let pos = |name: &str, v: f64| -> CliResult<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(bad(format!("{name} must be positive, got {v}")))
            }
        };
        if !(self.source.density_kg_m3.is_finite() && self.source.density_kg_m3 >= 0.0) {
            return Err(bad("source.density_kg_m3 must be non-negative"));
        }
        pos("simulate.lambda_m", self.simulate.lambda_m)?;
        pos("simulate.duration_s", self.simulate.duration_s)?;
        pos("simulate.sample_rate_hz", self.simulate.sample_rate_hz)?;
        pos("synth.duration_s", self.synth.duration_s)?;
        pos("synth.sample_rate_hz", self.synth.sample_rate_hz)?;
        pos("inference.lambda_ref_m", self.inference.lambda_ref_m)?;
        pos("budget.mass_nominal_kg", self.budget.mass_nominal_kg)?;
        if !self.synth.g_true.is_finite() {
            return Err(bad("synth.g_true must be finite"));
        }
        if !self.noise.field_floor_t_rthz.is_finite() || self.noise.field_floor_t_rthz < 0.0 {
            return Err(bad("noise.field_floor_t_rthz must be non-negative"));
        }
        if self.analysis.harmonics == 0 {
            return Err(bad("analysis.harmonics must be at least 1"));
        }
        if let Some(b) = self.analysis.block_length_s {
            pos("analysis.block_length_s", b)?;
        }
        if !(self.inference.confidence > 0.5 && self.inference.confidence < 1.0) {
            return Err(bad(format!("inference.confidence must lie in (0.5, 1), got {}", self.inference.confidence)));
        }
        let anchor = &self.inference.anchor;
        pos("inference.anchor.b", anchor.b)?;
        pos("inference.anchor.g", anchor.g)?;
        self.lambda_grid()?;
        self.forward_model()?.validate()?;
        Ok(())
    }

    pub fn channel(&self) -> CliResult<Channel> {
        Channel::from_name(&self.inference.channel).ok_or_else(|| {
            bad(format!(
                "inference.channel = {:?} is not one of neutron, proton-ne, proton-rb, electron",
                self.inference.channel
            ))
        })
    }

    pub fn lambda_ref(&self) -> CliResult<ForceRange> {
        Ok(ForceRange::new(self.inference.lambda_ref_m)?)
    }

    pub fn lambda_grid(&self) -> CliResult<Vec<f64>> {
        let g = &self.inference.lambda_grid;
        if g.points < 2 {
            return Err(bad("inference.lambda_grid.points must be at least 2"));
        }
        log_grid(g.min_m, g.max_m, g.points).map_err(|e| bad(format!("inference.lambda_grid: {e}")))
    }

    pub fn block(&self) -> CliResult<MassBlock> {
        let (side, rho, n) = (self.rotor.block_side, self.source.density_kg_m3, self.source.quadrature.n_per_axis);
        // An empty block is allowed; it yields an identically zero field.
        let block = if rho == 0.0 { MassBlock::new(side, 0.0, 0.0, n) } else { MassBlock::uniform(side, rho, n) };
        Ok(block?)
    }

    pub fn forward_model(&self) -> CliResult<ForwardModel> {
        Ok(ForwardModel {
            rotor: self.rotor.clone(),
            block: self.block()?,
            channel: self.channel()?,
            constants: PhysicalConstants::CODATA,
            samples_per_period: self.source.samples_per_period,
            harmonics: self.analysis.harmonics,
        })
    }

    pub fn sensor(&self) -> CliResult<SensorResponse> {
        Ok(SensorResponse::new(self.response)?)
    }

    /// Noise with the field floor converted to output volts at the modulation frequency.
    pub fn noise_model(&self) -> CliResult<NoiseModel> {
        let response = SensorResponse::new(self.response)?;
        let gain = response.gain(self.rotor.modulation_freq());
        Ok(NoiseModel {
            white_psd: self.noise.field_floor_t_rthz * gain,
            vibration_lines: self.noise.vibration_lines.clone(),
            vibration_broadband: self.noise.vibration_broadband,
            vib_to_field_coeff: self.noise.vib_to_field_coeff,
            attenuation_stages: self.noise.attenuation_stages.clone(),
        })
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            duration: self.synth.duration_s,
            sample_rate: self.synth.sample_rate_hz,
            t0: self.synth.t0_s,
            harmonics: self.analysis.harmonics,
            encoder_sigma: self.synth.encoder_sigma,
            seed: self.seed,
        }
    }

    pub fn budget_context(&self, g_central: f64, phase_quadrature: f64) -> CliResult<BudgetContext> {
        let mut ctx = BudgetContext::new(self.forward_model()?);
        ctx.lambda = self.lambda_ref()?;
        ctx.g_central = self.budget.g_central.unwrap_or(g_central);
        ctx.phase_quadrature = self.budget.phase_quadrature.unwrap_or(phase_quadrature);
        ctx.anchor = self.inference.anchor;
        ctx.response = self.response;
        ctx.vib_to_field = self.noise.vib_to_field_coeff;
        ctx.mass_nominal = self.budget.mass_nominal_kg;
        ctx.mode = self.budget.mode;
        Ok(ctx)
    }

    /// SHA-256 of the canonical JSON form, with the output directory blanked.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        sha256_hex(canonical_json(&c).as_bytes())
    }
}

/// JSON with object keys sorted, independent of struct field order.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("serializable");
    serde_json::to_string(&v).expect("serializable")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.fingerprint(), c.fingerprint());
    }

    #[test]
    fn unknown_key_is_located() {
        let err = RunConfig::from_toml("config_version = 1\n[rotor]\nring_radus = 0.5\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("ring_radus") && msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn version_is_required() {
        assert!(RunConfig::from_toml("seed = 1\n").unwrap_err().to_string().contains("config_version"));
        assert!(RunConfig::from_toml("config_version = 9\n").is_err());
    }

    #[test]
    fn output_dir_is_not_fingerprinted() {
        let a = RunConfig::default();
        let b = RunConfig { output_dir: "elsewhere".into(), ..a.clone() };
        let c = RunConfig { seed: 7, ..a.clone() };
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn semantic_errors_name_the_key() {
        let err = RunConfig::from_toml("config_version = 1\n[inference]\nconfidence = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("inference.confidence"));
        assert_eq!(err.exit_code(), 2);
    }
}
