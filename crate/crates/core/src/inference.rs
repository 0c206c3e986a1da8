//! Field-to-coupling inversion, the systematic budget, confidence limits
//! and exclusion curves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::constants::{Channel, ForceRange, PhysicalConstants};
use crate::error::{ensure, Error, Result};
use crate::field::{identical_blocks, FieldEngine, FieldTimeSeries};
use crate::harmonics::{fourier_coefficients, HarmonicTemplate, DEFAULT_HARMONICS};
use crate::kinematics::{MassBlock, RotorConfig};
use crate::response::ResponseParams;

pub use crate::series::log_grid;

/// Per-unit-coupling forward model: rotor, source blocks and sensor channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardModel {
    pub rotor: RotorConfig,
    /// Mounted at every rotor position.
    pub block: MassBlock,
    pub channel: Channel,
    pub constants: PhysicalConstants,
    /// Time samples per rotor period.
    pub samples_per_period: usize,
    pub harmonics: usize,
}

impl ForwardModel {
    /// Default rotor with lead blocks on an `n³` lattice.
    pub fn lead(channel: Channel, n_per_axis: usize) -> Result<Self> {
        let rotor = RotorConfig::default();
        Ok(ForwardModel {
            block: MassBlock::lead(rotor.block_side, n_per_axis)?,
            rotor,
            channel,
            constants: PhysicalConstants::CODATA,
            samples_per_period: 120,
            harmonics: DEFAULT_HARMONICS,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.rotor.validate()?;
        self.constants.validate()?;
        ensure(self.harmonics >= 1, || Error::Config("at least one harmonic is required".into()))?;
        let n = self.rotor.symmetry_order();
        let needed = 2 * self.harmonics * n + 1;
        ensure(self.samples_per_period >= needed && self.samples_per_period.is_multiple_of(n), || {
            Error::Config(format!(
                "samples_per_period must be a multiple of {n} and at least {needed}"
            ))
        })
    }

    /// One rotor period of the per-unit-coupling field.
    pub fn field_series(&self, lambda: ForceRange) -> Result<FieldTimeSeries> {
        self.validate()?;
        let blocks = identical_blocks(&self.rotor, &self.block);
        FieldEngine::new(self.constants).one_period(&self.rotor, &blocks, lambda, &self.channel, self.samples_per_period)
    }

    pub fn template(&self, lambda: ForceRange) -> Result<HarmonicTemplate> {
        fourier_coefficients(&self.field_series(lambda)?, self.harmonics)
    }

    /// c²-weighted amplitude `Σ c_k p_k / Σ c_k²`, where `p_k = a₁c_k` is the
    /// projection onto harmonic k; the scale a field amplitude is divided by.
    pub fn weighted_amplitude(&self, lambda: ForceRange) -> Result<f64> {
        Ok(weighted_amplitude(&self.template(lambda)?))
    }
}

pub fn weighted_amplitude(t: &HarmonicTemplate) -> f64 {
    let num: f64 = t.c.iter().map(|c| c * (t.a1 * c)).sum();
    let den: f64 = t.c.iter().map(|c| c * c).sum();
    num / den
}

/// Coupling that produces a weighted field amplitude `b_measured` (T).
pub fn field_to_coupling(b_measured: f64, lambda: ForceRange, model: &ForwardModel) -> Result<f64> {
    ensure(b_measured.is_finite(), || Error::Domain("measured field must be finite".into()))?;
    let a = match model.weighted_amplitude(lambda) {
        Err(Error::Degenerate(_)) => 0.0,
        other => other?,
    };
    ensure(a.abs() > 0.0 && a.is_finite(), || {
        Error::Degenerate(format!("forward amplitude vanishes at λ = {} m", lambda.meters()))
    })?;
    Ok(b_measured / a)
}

/// A fixed field ↔ coupling pair defining a linear conversion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConversionAnchor {
    /// T.
    pub b: f64,
    pub g: f64,
}

impl Default for ConversionAnchor {
    fn default() -> Self {
        ConversionAnchor { b: 1.8e-18, g: 5.31e-39 }
    }
}

impl ConversionAnchor {
    pub fn coupling(&self, b: f64) -> f64 {
        b * self.g / self.b
    }

    pub fn field(&self, g: f64) -> f64 {
        g * self.b / self.g
    }
}

/// One line of the systematic budget. Both sides are non-negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudgetRow {
    pub name: String,
    pub nominal: f64,
    pub unit: String,
    pub uncertainty: f64,
    pub delta_plus: f64,
    pub delta_minus: f64,
    /// Entry is an upper bound rather than an estimate.
    pub upper_bound: bool,
}

impl ErrorBudgetRow {
    pub fn symmetric(name: &str, nominal: f64, unit: &str, uncertainty: f64, delta: f64) -> Self {
        Self::pair(name, nominal, unit, uncertainty, delta, delta)
    }

    pub fn pair(name: &str, nominal: f64, unit: &str, uncertainty: f64, plus: f64, minus: f64) -> Self {
        ErrorBudgetRow {
            name: name.into(),
            nominal,
            unit: unit.into(),
            uncertainty,
            delta_plus: plus.abs(),
            delta_minus: minus.abs(),
            upper_bound: false,
        }
    }

    fn bound(mut self) -> Self {
        self.upper_bound = true;
        self
    }

    pub fn max_side(&self) -> f64 {
        self.delta_plus.max(self.delta_minus)
    }
}

/// Quadrature sum of the larger side of every row.
pub fn combine_budget(rows: &[ErrorBudgetRow]) -> f64 {
    rows.iter().map(|r| r.max_side().powi(2)).sum::<f64>().sqrt()
}

/// Reference budget rows, with upper bounds entered at their bound values.
pub fn reference_budget() -> Vec<ErrorBudgetRow> {
    let e = 1e-39;
    vec![
        ErrorBudgetRow::symmetric("mass", 12.00, "kg", 0.01, 0.01 * e).bound(),
        ErrorBudgetRow::symmetric("position_x", 0.525, "m", 0.055, 0.28 * e),
        ErrorBudgetRow::symmetric("position_y", 0.0, "m", 0.01, 0.05 * e).bound(),
        ErrorBudgetRow::symmetric("position_z", 0.0, "m", 0.01, 0.05 * e).bound(),
        ErrorBudgetRow::symmetric("modulation_freq", 6.00, "Hz", 0.14, 0.06 * e),
        ErrorBudgetRow::symmetric("ring_radius", 0.500, "m", 0.01, 0.06 * e),
        ErrorBudgetRow::symmetric("calibration_k", 0.193e-6 / 1e-15, "V/T", 0.016e-6 / 1e-15, 0.77 * e),
        ErrorBudgetRow::pair("phase", 10.1f64.to_radians(), "rad", 5.6f64.to_radians(), 1.4 * e, 2.3 * e),
        ErrorBudgetRow::symmetric("vibration", 0.0, "m/s/sqrt(Hz)", 5.6e-10, 5.4 * e).bound(),
    ]
}

/// Names accepted by [`sensitivity`].
pub const BUDGET_PARAMETERS: [&str; 9] = [
    "mass",
    "position_x",
    "position_y",
    "position_z",
    "modulation_freq",
    "ring_radius",
    "calibration_k",
    "phase",
    "vibration",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityMode {
    /// Exact ±1σ re-evaluation.
    #[default]
    OneSigma,
    /// Derivative by central difference at σ/100, times σ.
    CentralDifference,
}

/// Everything the budget needs beyond the forward model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetContext {
    pub model: ForwardModel,
    pub lambda: ForceRange,
    /// Central coupling the relative shifts apply to.
    pub g_central: f64,
    pub anchor: ConversionAnchor,
    pub response: ResponseParams,
    /// Coupling-equivalent quadrature amplitude seen by a phase error.
    pub phase_quadrature: f64,
    /// T/(m/s).
    pub vib_to_field: f64,
    /// Nominal source mass the mass row is relative to, kg.
    pub mass_nominal: f64,
    pub mode: SensitivityMode,
}

impl BudgetContext {
    pub fn new(model: ForwardModel) -> Self {
        BudgetContext {
            model,
            lambda: ForceRange::new(5.0).expect("positive"),
            g_central: 5.31e-39,
            anchor: ConversionAnchor::default(),
            response: ResponseParams::default(),
            phase_quadrature: 12.38e-39,
            vib_to_field: crate::synth::DEFAULT_VIB_TO_FIELD,
            mass_nominal: 12.00,
            mode: SensitivityMode::OneSigma,
        }
    }

    fn perturbed(&self, name: &str, delta: f64) -> Result<ForwardModel> {
        let mut m = self.model.clone();
        match name {
            "mass" => m.block.nucleon_density *= 1.0 + delta / self.mass_nominal,
            "position_x" => m.rotor.sensor_position.0[0] += delta,
            "position_y" => m.rotor.sensor_position.0[1] += delta,
            "position_z" => m.rotor.sensor_position.0[2] += delta,
            "modulation_freq" => m.rotor.rotation_freq += delta / m.rotor.symmetry_order() as f64,
            "ring_radius" => m.rotor.ring_radius += delta,
            _ => return Err(Error::UnknownParameter(name.into())),
        }
        Ok(m)
    }
}

/// `(Δg₊, Δg₋)` for a ±`perturbation` shift of `name`.
///
/// Geometric parameters rerun the forward model with the measured field
/// held fixed, so `g' = g·A_nom/A'`. The calibration enters as `K/K'`.
/// A phase error δ mixes the quadrature component into harmonic k as
/// `g cos kδ + q sin kδ`.
pub fn sensitivity(name: &str, perturbation: f64, ctx: &BudgetContext) -> Result<(f64, f64)> {
    ensure(perturbation.is_finite() && perturbation >= 0.0, || {
        Error::Domain("perturbation must be a non-negative finite number".into())
    })?;
    let g = ctx.g_central;
    match name {
        "calibration_k" => {
            let k = ctx.response.k_by_n;
            ensure(perturbation < k, || Error::Domain("calibration perturbation exceeds K".into()))?;
            let shift = |d: f64| g * (k / (k + d) - 1.0).abs();
            Ok(two_sided(ctx.mode, perturbation, shift))
        }
        "phase" => {
            let template = ctx.model.template(ctx.lambda)?;
            let total: f64 = template.c.iter().map(|c| c * c).sum();
            let shifted = |d: f64| {
                template
                    .c
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let kd = (i + 1) as f64 * d;
                        c * c / total * (g * kd.cos() + ctx.phase_quadrature * kd.sin())
                    })
                    .sum::<f64>()
            };
            Ok(two_sided(ctx.mode, perturbation, |d| (shifted(d) - g).abs()))
        }
        "vibration" => {
            let dg = ctx.anchor.coupling(ctx.vib_to_field * perturbation).abs();
            Ok((dg, dg))
        }
        _ => {
            ctx.perturbed(name, 0.0)?;
            let a0 = ctx.model.weighted_amplitude(ctx.lambda)?;
            let shift = |d: f64| -> Result<f64> {
                let a = ctx.perturbed(name, d)?.weighted_amplitude(ctx.lambda)?;
                ensure(a != 0.0, || Error::Degenerate(format!("{name} shift nulls the signal")))?;
                Ok(g * (a0 / a - 1.0).abs())
            };
            match ctx.mode {
                SensitivityMode::OneSigma => Ok((shift(perturbation)?, shift(-perturbation)?)),
                SensitivityMode::CentralDifference => {
                    let h = perturbation / 100.0;
                    let ap = ctx.perturbed(name, h)?.weighted_amplitude(ctx.lambda)?;
                    let am = ctx.perturbed(name, -h)?.weighted_amplitude(ctx.lambda)?;
                    let d = g * ((ap - am) / (2.0 * h) / a0).abs() * perturbation;
                    Ok((d, d))
                }
            }
        }
    }
}

fn two_sided(mode: SensitivityMode, sigma: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    match mode {
        SensitivityMode::OneSigma => (f(sigma), f(-sigma)),
        SensitivityMode::CentralDifference => {
            let h = sigma / 100.0;
            let d = ((f(h) - f(-h)) / (2.0 * h)).abs() * sigma;
            let d = if d == 0.0 { f(sigma).max(f(-sigma)) } else { d };
            (d, d)
        }
    }
}

/// Recomputes every reference row through [`sensitivity`], keeping its
/// nominal value and uncertainty.
pub fn build_budget(ctx: &BudgetContext) -> Result<Vec<ErrorBudgetRow>> {
    reference_budget()
        .into_par_iter()
        .map(|row| {
            let (plus, minus) = sensitivity(&row.name, row.uncertainty, ctx)?;
            Ok(ErrorBudgetRow { delta_plus: plus, delta_minus: minus, ..row })
        })
        .collect()
}

/// Budget as CSV, one row per parameter.
pub fn budget_csv(rows: &[ErrorBudgetRow]) -> String {
    let mut out = String::from("parameter,nominal,unit,uncertainty,delta_g_plus,delta_g_minus,upper_bound\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6e},{},{:.6e},{:.6e},{:.6e},{}\n",
            r.name, r.nominal, r.unit, r.uncertainty, r.delta_plus, r.delta_minus, r.upper_bound
        ));
    }
    out
}

/// One-sided Gaussian bound `|central| + z(confidence)·√(stat² + syst²)`.
pub fn confidence_limit(central: f64, stat: f64, syst: f64, confidence: f64) -> Result<f64> {
    ensure(stat >= 0.0 && syst >= 0.0 && central.is_finite(), || {
        Error::Domain("uncertainties must be non-negative".into())
    })?;
    ensure(confidence > 0.5 && confidence < 1.0, || {
        Error::Domain(format!("confidence {confidence} outside (0.5, 1)"))
    })?;
    Ok(central.abs() + one_sided_z(confidence) * stat.hypot(syst))
}

pub fn one_sided_z(confidence: f64) -> f64 {
    Normal::standard().inverse_cdf(confidence)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExclusionCurve {
    pub lambdas: Vec<f64>,
    pub g_limit: Vec<f64>,
    pub channel: Channel,
    pub confidence: f64,
}

impl ExclusionCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda_m,g_limit\n");
        for (l, g) in self.lambdas.iter().zip(&self.g_limit) {
            out.push_str(&format!("{l:.9e},{g:.9e}\n"));
        }
        out
    }
}

/// Default range grid: 60 log-spaced points over [0.03, 400] m.
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(0.03, 400.0, 60).expect("valid grid")
}

/// Coupling bound per λ for a field bound `b_bound` (T).
pub fn exclusion_curve(b_bound: f64, lambdas: &[f64], model: &ForwardModel, confidence: f64) -> Result<ExclusionCurve> {
    ensure(b_bound > 0.0 && b_bound.is_finite(), || Error::Domain("field bound must be positive".into()))?;
    ensure(!lambdas.is_empty(), || Error::Domain("empty λ grid".into()))?;
    ensure(lambdas.windows(2).all(|w| w[1] > w[0]), || {
        Error::Domain("λ grid must be strictly increasing".into())
    })?;
    ensure(lambdas[0] >= 1e-3 && lambdas[lambdas.len() - 1] <= 1e4, || {
        Error::Domain("λ grid must lie within [1e-3, 1e4] m".into())
    })?;
    let g_limit = lambdas
        .par_iter()
        .map(|&l| field_to_coupling(b_bound, ForceRange::new(l)?, model).map(f64::abs))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExclusionCurve { lambdas: lambdas.to_vec(), g_limit, channel: model.channel, confidence })
}

/// Rescales a limit from one spin channel to another of the same sensor species.
pub fn channel_rescale(curve: &ExclusionCurve, from: &Channel, to: &Channel) -> Result<ExclusionCurve> {
    ensure(from.species == to.species, || {
        Error::IncompatibleChannels(format!("{} and {} use different sensor species", from.name(), to.name()))
    })?;
    ensure(curve.channel.kind == from.kind && curve.channel.species == from.species, || {
        Error::IncompatibleChannels(format!("curve is for {}, not {}", curve.channel.name(), from.name()))
    })?;
    let k = from.zeta / to.zeta;
    Ok(ExclusionCurve {
        g_limit: curve.g_limit.iter().map(|g| g * k).collect(),
        channel: *to,
        ..curve.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e39(x: f64) -> f64 {
        x * 1e-39
    }

    #[test]
    fn budget_arithmetic() {
        let total = combine_budget(&reference_budget());
        assert!((total - e39(5.93)).abs() < e39(0.01), "{total:e}");
        assert!((total - e39(5.88)).abs() / e39(5.88) < 0.05);
        assert_eq!(combine_budget(&[ErrorBudgetRow::symmetric("a", 0.0, "", 0.0, 2.5)]), 2.5);
        let pyth = [ErrorBudgetRow::symmetric("a", 0.0, "", 0.0, 3.0), ErrorBudgetRow::pair("b", 0.0, "", 0.0, 1.0, 4.0)];
        assert!((combine_budget(&pyth) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn anchored_conversion() {
        let a = ConversionAnchor::default();
        assert!(((a.coupling(4.2e-18) - e39(12.38)) / e39(12.38)).abs() < 0.01);
        assert!((a.field(a.coupling(3e-18)) - 3e-18).abs() < 1e-30);
    }

    #[test]
    fn confidence_examples() {
        let z = one_sided_z(0.95);
        assert!((z - 1.6449).abs() < 1e-4);
        let n = confidence_limit(e39(5.31), e39(12.38), e39(5.88), 0.95).unwrap();
        assert!((n - 2.79e-38).abs() < 0.01e-38, "{n:e}");
        let e = confidence_limit(2.8e-36, 6.7e-36, 6.2e-36, 0.95).unwrap();
        assert!((e - 1.78e-35).abs() < 0.01e-35, "{e:e}");
        assert_eq!(confidence_limit(-3.0, 0.0, 0.0, 0.9).unwrap(), 3.0);
        assert!(confidence_limit(1.0, -1.0, 0.0, 0.95).is_err());
        assert!(confidence_limit(1.0, 1.0, 0.0, 0.4).is_err());
    }

    #[test]
    fn rescale_examples() {
        let e = Channel::electron_rb();
        let p = Channel::proton_rb();
        let curve = ExclusionCurve { lambdas: vec![1.0, 2.0], g_limit: vec![1e-35, 2e-35], channel: e, confidence: 0.95 };
        let same = channel_rescale(&curve, &e, &e).unwrap();
        assert_eq!(same.g_limit, curve.g_limit);
        let r = channel_rescale(&curve, &e, &p).unwrap();
        assert!((r.g_limit[0] / curve.g_limit[0] - 0.13 / 0.29).abs() < 1e-12);
        let back = channel_rescale(&r, &p, &e).unwrap();
        for (a, b) in back.g_limit.iter().zip(&curve.g_limit) {
            assert!((a / b - 1.0).abs() < 1e-12);
        }
        assert!(matches!(
            channel_rescale(&curve, &e, &Channel::neutron_ne()),
            Err(Error::IncompatibleChannels(_))
        ));
    }

    #[test]
    fn unknown_parameter() {
        let ctx = BudgetContext::new(ForwardModel::lead(Channel::neutron_ne(), 2).unwrap());
        assert!(matches!(sensitivity("colour", 1.0, &ctx), Err(Error::UnknownParameter(_))));
    }

    #[test]
    fn mass_row_is_linear_scaling() {
        let ctx = BudgetContext::new(ForwardModel::lead(Channel::neutron_ne(), 2).unwrap());
        let (p, m) = sensitivity("mass", 0.01, &ctx).unwrap();
        assert!((p - e39(5.31) * (1.0 - 12.0 / 12.01)).abs() < 1e-45);
        assert!(p < e39(0.01) && m < e39(0.01));
    }

    #[test]
    fn phase_row_is_asymmetric() {
        let ctx = BudgetContext::new(ForwardModel::lead(Channel::neutron_ne(), 2).unwrap());
        let (p, m) = sensitivity("phase", 5.6f64.to_radians(), &ctx).unwrap();
        assert!(p != m && p > 0.0 && m > 0.0);
        assert!((e39(1.4) / 3.0..e39(1.4) * 3.0).contains(&p), "{p:e}");
        assert!((e39(2.3) / 3.0..e39(2.3) * 3.0).contains(&m), "{m:e}");
    }

    #[test]
    fn vibration_row_matches_bound() {
        let ctx = BudgetContext::new(ForwardModel::lead(Channel::neutron_ne(), 2).unwrap());
        let (v, _) = sensitivity("vibration", 5.6e-10, &ctx).unwrap();
        assert!((v - e39(5.4)).abs() < e39(0.01), "{v:e}");
    }

    #[test]
    fn inversion_is_linear() {
        let model = ForwardModel::lead(Channel::neutron_ne(), 3).unwrap();
        let lam = ForceRange::new(5.0).unwrap();
        assert_eq!(field_to_coupling(0.0, lam, &model).unwrap(), 0.0);
        let a = field_to_coupling(1e-18, lam, &model).unwrap();
        let b = field_to_coupling(3e-18, lam, &model).unwrap();
        assert!((b / a - 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_source_is_degenerate() {
        let mut model = ForwardModel::lead(Channel::neutron_ne(), 2).unwrap();
        model.block.nucleon_density = 0.0;
        let err = field_to_coupling(1e-18, ForceRange::new(5.0).unwrap(), &model).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    proptest::proptest! {
        #[test]
        fn adding_rows_never_lowers_the_total(vals in proptest::collection::vec((0.0f64..10.0, 0.0f64..10.0), 1..12), extra in 0.0f64..10.0) {
            let rows: Vec<_> = vals.iter().map(|&(p, m)| ErrorBudgetRow::pair("r", 0.0, "", 0.0, p, m)).collect();
            let mut more = rows.clone();
            more.push(ErrorBudgetRow::symmetric("x", 0.0, "", 0.0, extra));
            proptest::prop_assert!(combine_budget(&more) >= combine_budget(&rows));
        }

        #[test]
        fn limit_is_monotone(c in -5.0f64..5.0, s in 0.0f64..5.0, y in 0.0f64..5.0, cl in 0.6f64..0.98, d in 0.001f64..1.0) {
            let base = confidence_limit(c, s, y, cl).unwrap();
            proptest::prop_assert!(confidence_limit(c.abs() + d, s, y, cl).unwrap() >= base);
            proptest::prop_assert!(confidence_limit(c, s + d, y, cl).unwrap() >= base);
            proptest::prop_assert!(confidence_limit(c, s, y + d, cl).unwrap() >= base);
            proptest::prop_assert!(confidence_limit(c, s, y, (cl + d * 0.01).min(0.999)).unwrap() >= base);
        }
    }
}
