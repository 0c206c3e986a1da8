//! Parity-odd spin–velocity Yukawa kernel and its volume integral over the
//! rotating source masses.
//!
//! The field along the sensitive axis, per unit g_A·g_V, is
//!
//! ```text
//! b(t) = ζ/|μ| · Σ_blocks Σ_cells n·ΔV · (ħ/4π) (v·ŷ) e^{-r/λ} / r
//! ```
//!
//! evaluated by cell-center quadrature on the precomputed body lattice. The
//! reduction order is fixed: blocks in index order, cells in lattice order,
//! left-to-right sequential sums. Time samples are evaluated in parallel, so
//! a series is bitwise reproducible regardless of thread count.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{Channel, ForceRange, PhysicalConstants};
use crate::error::{ensure, Error, Result};
use crate::kinematics::{block_contains, element_state_unchecked, MassBlock, RotorConfig};
use crate::series::{whole_periods, PeriodicSignal};
use crate::vec3::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureSpec {
    pub n_per_axis: usize,
    /// Accepted relative change between the `n` and `2n` lattices.
    pub refinement_tolerance: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec { n_per_axis: 16, refinement_tolerance: 0.01 }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        ensure(self.n_per_axis >= 1, || Error::Config("n_per_axis must be at least 1".into()))?;
        ensure(self.refinement_tolerance > 0.0 && self.refinement_tolerance < 1.0, || {
            Error::Config(format!(
                "refinement_tolerance must lie in (0, 1), got {}",
                self.refinement_tolerance
            ))
        })
    }
}

/// `(ħ/4π) v e^{-|Δr|/λ}/|Δr|`, the potential per unit coupling and unit
/// spin projection, J. Parallel to `v`.
pub fn kernel(delta_r: Vec3, v: Vec3, lambda: ForceRange) -> Result<Vec3> {
    let r = delta_r.norm();
    ensure(r > 0.0, || Error::Geometry("kernel evaluated at zero separation".into()))?;
    Ok(v * (hbar_over_4pi(&PhysicalConstants::CODATA) * yukawa(r, lambda.meters())))
}

#[inline]
fn hbar_over_4pi(c: &PhysicalConstants) -> f64 {
    c.hbar / (4.0 * PI)
}

#[inline]
fn yukawa(r: f64, lambda: f64) -> f64 {
    (-r / lambda).exp() / r
}

/// Pseudomagnetic field per unit coupling, sampled over time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldTimeSeries {
    pub times: Vec<f64>,
    /// Field along the sensitive axis per unit g_A·g_V, T.
    pub b_per_coupling: Vec<f64>,
    pub lambda: ForceRange,
    pub channel: Channel,
    pub rotation_freq: f64,
    pub modulation_freq: f64,
    /// Rotor angle of block 0 at `times[0]`, rad in [0, 2π).
    pub start_angle: f64,
    /// Symmetry order of the block layout; `modulation_freq / rotation_freq`.
    pub symmetry_order: usize,
}

impl FieldTimeSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Sample rate of a uniform grid.
    pub fn sample_rate(&self) -> Result<f64> {
        uniform_rate(&self.times)
    }

    pub fn mean(&self) -> f64 {
        self.b_per_coupling.iter().sum::<f64>() / self.len() as f64
    }

    /// Fourier series in harmonics of the rotation frequency, keeping every
    /// order the grid resolves. Requires a whole number of rotor periods.
    pub fn rotor_harmonics(&self) -> Result<PeriodicSignal> {
        let fs = self.sample_rate()?;
        let periods = whole_periods(self.len(), self.rotation_freq, fs).ok_or_else(|| {
            Error::Windowing("field series does not span an integer number of rotor periods".into())
        })?;
        let max_order = (self.len() - 1) / (2 * periods);
        PeriodicSignal::from_samples(&self.b_per_coupling, fs, self.times[0], self.rotation_freq, max_order)
    }

    /// Strongest non-DC spectral line `(freq Hz, amplitude T)`.
    pub fn dominant_line(&self) -> Result<(f64, f64)> {
        let sig = self.rotor_harmonics()?;
        sig.harmonics
            .iter()
            .map(|h| (h.order as f64 * sig.fundamental, h.amplitude()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| Error::Windowing("series too short to resolve any harmonic".into()))
    }

    pub fn scaled(&self, k: f64) -> Self {
        FieldTimeSeries {
            b_per_coupling: self.b_per_coupling.iter().map(|b| b * k).collect(),
            ..self.clone()
        }
    }
}

pub(crate) fn uniform_rate(times: &[f64]) -> Result<f64> {
    ensure(times.len() >= 2, || Error::Windowing("need at least two samples".into()))?;
    let dt = times[1] - times[0];
    ensure(dt > 0.0, || Error::Windowing("times must be strictly increasing".into()))?;
    let span = times[times.len() - 1] - times[0];
    let expected = dt * (times.len() - 1) as f64;
    ensure((span - expected).abs() <= 1e-9 * span.abs().max(dt), || {
        Error::Windowing("time grid is not uniform".into())
    })?;
    Ok(1.0 / dt)
}

/// `n` uniform samples at `sample_rate`, starting at 0.
pub fn uniform_times(sample_rate: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / sample_rate).collect()
}

/// Result of the `n` versus `2n` lattice comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub coarse: f64,
    pub fine: f64,
    pub relative_change: f64,
    pub tolerance: f64,
    pub converged: bool,
}

/// Field evaluator holding the constants in use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldEngine {
    pub constants: PhysicalConstants,
}

impl FieldEngine {
    pub fn new(constants: PhysicalConstants) -> Self {
        FieldEngine { constants }
    }

    /// Field along the sensitive axis at time `t`, T per unit coupling.
    /// `blocks[i]` is mounted at rotor offset `i`.
    pub fn field_at(
        &self,
        config: &RotorConfig,
        blocks: &[MassBlock],
        lambda: ForceRange,
        channel: &Channel,
        t: f64,
    ) -> Result<f64> {
        check_blocks(config, blocks)?;
        let Some(axis) = config.sensitive_axis.normalized() else {
            return Err(Error::Config("sensitive axis must be non-zero".into()));
        };
        for i in 0..blocks.len() {
            ensure(!block_contains(config, i, t, config.sensor_position), || {
                Error::Geometry(format!("sensor lies inside block {i} at t = {t} s"))
            })?;
        }
        Ok(self.field_unchecked(config, blocks, lambda.meters(), channel, axis, t))
    }

    fn field_unchecked(
        &self,
        config: &RotorConfig,
        blocks: &[MassBlock],
        lambda: f64,
        channel: &Channel,
        axis: Vec3,
        t: f64,
    ) -> f64 {
        let frame = config.frame();
        let sensor = config.sensor_position;
        let mut total = 0.0;
        for (i, block) in blocks.iter().enumerate() {
            let mut sum = 0.0;
            if config.body_rotation {
                for cell in &block.body_grid {
                    let (p, v) = element_state_unchecked(config, &frame, i, cell.offset, t);
                    let r = (sensor - p).norm();
                    sum += cell.volume * v.dot(axis) * yukawa(r, lambda);
                }
            } else {
                let (center, v) = element_state_unchecked(config, &frame, i, Vec3::ZERO, t);
                let rel = sensor - center;
                for cell in &block.body_grid {
                    let r = (rel - cell.offset).norm();
                    sum += cell.volume * yukawa(r, lambda);
                }
                sum *= v.dot(axis);
            }
            total += block.nucleon_density * sum;
        }
        total * hbar_over_4pi(&self.constants) * channel.field_factor()
    }

    /// Evaluates `field_at` on every time.
    pub fn field_time_series(
        &self,
        config: &RotorConfig,
        blocks: &[MassBlock],
        lambda: ForceRange,
        channel: &Channel,
        times: &[f64],
    ) -> Result<FieldTimeSeries> {
        uniform_rate(times)?;
        let span = times[times.len() - 1] - times[0] + (times[1] - times[0]);
        ensure(span * config.rotation_freq >= 1.0 - 1e-9, || {
            Error::Windowing("time grid must span at least one rotor period".into())
        })?;
        let b = times
            .par_iter()
            .map(|&t| self.field_at(config, blocks, lambda, channel, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(FieldTimeSeries {
            times: times.to_vec(),
            b_per_coupling: b,
            lambda,
            channel: *channel,
            rotation_freq: config.rotation_freq,
            modulation_freq: config.modulation_freq(),
            start_angle: config.block_angle(0, times[0]).rem_euclid(std::f64::consts::TAU),
            symmetry_order: config.symmetry_order(),
        })
    }

    /// One rotor period sampled at `samples_per_period` points.
    pub fn one_period(
        &self,
        config: &RotorConfig,
        blocks: &[MassBlock],
        lambda: ForceRange,
        channel: &Channel,
        samples_per_period: usize,
    ) -> Result<FieldTimeSeries> {
        let fs = samples_per_period as f64 * config.rotation_freq;
        self.field_time_series(config, blocks, lambda, channel, &uniform_times(fs, samples_per_period))
    }

    /// Compares the field at `t` on the blocks' lattice (n) against a 2n lattice.
    pub fn check_convergence(
        &self,
        config: &RotorConfig,
        blocks: &[MassBlock],
        lambda: ForceRange,
        channel: &Channel,
        t: f64,
        quad: &QuadratureSpec,
    ) -> Result<ConvergenceReport> {
        quad.validate()?;
        let coarse_blocks = rediscretize(blocks, quad.n_per_axis)?;
        let fine_blocks = rediscretize(blocks, 2 * quad.n_per_axis)?;
        let coarse = self.field_at(config, &coarse_blocks, lambda, channel, t)?;
        let fine = self.field_at(config, &fine_blocks, lambda, channel, t)?;
        let relative_change = if fine == 0.0 {
            if coarse == 0.0 { 0.0 } else { f64::INFINITY }
        } else {
            ((coarse - fine) / fine).abs()
        };
        Ok(ConvergenceReport {
            coarse,
            fine,
            relative_change,
            tolerance: quad.refinement_tolerance,
            converged: relative_change <= quad.refinement_tolerance,
        })
    }
}

fn rediscretize(blocks: &[MassBlock], n: usize) -> Result<Vec<MassBlock>> {
    blocks.iter().map(|b| b.rediscretized(n)).collect()
}

fn check_blocks(config: &RotorConfig, blocks: &[MassBlock]) -> Result<()> {
    ensure(blocks.len() == config.block_count(), || {
        Error::Config(format!(
            "{} mass blocks supplied for a rotor with {} positions",
            blocks.len(),
            config.block_count()
        ))
    })
}

/// Identical blocks for every rotor position.
pub fn identical_blocks(config: &RotorConfig, block: &MassBlock) -> Vec<MassBlock> {
    vec![block.clone(); config.block_count()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::LEAD_DENSITY;

    const HBAR_OVER_4PI: f64 = 8.391_98e-36;

    fn lead_blocks(config: &RotorConfig, n: usize) -> Vec<MassBlock> {
        identical_blocks(config, &MassBlock::lead(config.block_side, n).unwrap())
    }

    fn lambda(m: f64) -> ForceRange {
        ForceRange::new(m).unwrap()
    }

    #[test]
    fn kernel_examples() {
        let dr = Vec3::new(1.0, 0.0, 0.0);
        assert_eq!(kernel(dr, Vec3::ZERO, lambda(1.0)).unwrap(), Vec3::ZERO);
        let k = kernel(dr, Vec3::Y, ForceRange::INFINITE).unwrap();
        assert!((k.norm() - HBAR_OVER_4PI).abs() / HBAR_OVER_4PI < 1e-5);
        assert!(k.x() == 0.0 && k.z() == 0.0);
        let at_range = kernel(dr, Vec3::Y, lambda(1.0)).unwrap().norm();
        let halved = kernel(dr, Vec3::Y, lambda(0.5)).unwrap().norm();
        assert!((halved / at_range - (-1.0f64).exp()).abs() < 1e-14);
        assert_eq!(kernel(-dr, Vec3::Y, lambda(1.0)).unwrap(), kernel(dr, Vec3::Y, lambda(1.0)).unwrap());
        assert!(matches!(kernel(Vec3::ZERO, Vec3::Y, lambda(1.0)), Err(Error::Geometry(_))));
    }

    #[test]
    fn zero_density_gives_zero_field() {
        let c = RotorConfig::default();
        let mut block = MassBlock::lead(0.1, 4).unwrap();
        block.nucleon_density = 0.0;
        let b = FieldEngine::default()
            .field_at(&c, &identical_blocks(&c, &block), lambda(5.0), &Channel::neutron_ne(), 0.0)
            .unwrap();
        assert_eq!(b, 0.0);
    }

    #[test]
    fn single_cell_equals_point_source() {
        let c = RotorConfig::default();
        let blocks = lead_blocks(&c, 1);
        let ch = Channel::neutron_ne();
        let t = 0.0137;
        let b = FieldEngine::default().field_at(&c, &blocks, lambda(5.0), &ch, t).unwrap();
        // Independent oracle: sum of two point sources at the block centers.
        let density = blocks[0].nucleon_density;
        let mut expected = 0.0;
        for i in 0..2 {
            let (p, v) = crate::kinematics::element_state(&c, i, Vec3::ZERO, t).unwrap();
            let k = kernel(c.sensor_position - p, v, lambda(5.0)).unwrap();
            expected += density * 1e-3 * k.dot(c.sensitive_axis);
        }
        expected *= ch.field_factor();
        assert!(((b - expected) / expected).abs() < 1e-12, "{b} {expected}");
    }

    #[test]
    fn lowest_point_field_scale() {
        // Point-source oracle for the near block alone:
        // (ħ/4πμ)·ζ·n·V·|v|·e^{-r/λ}/r with r = 0.525 m.
        let c = RotorConfig::default();
        let ch = Channel::neutron_ne();
        let n = LEAD_DENSITY / PhysicalConstants::CODATA.m_u;
        let near = HBAR_OVER_4PI * ch.field_factor() * n * 1e-3 * 9.424_778 * yukawa(0.525, 5.0);
        let far_r = (0.525f64.powi(2) + 1.0).sqrt();
        let far = HBAR_OVER_4PI * ch.field_factor() * n * 1e-3 * 9.424_778 * yukawa(far_r, 5.0);
        let b = FieldEngine::default().field_at(&c, &lead_blocks(&c, 16), lambda(5.0), &ch, 0.0).unwrap();
        assert!(((b - (near - far)) / (near - far)).abs() < 0.01, "{b:e} vs {:e}", near - far);
    }

    #[test]
    fn sensor_inside_mass_is_a_geometry_error() {
        let c = RotorConfig { sensor_position: Vec3::new(0.0, 0.0, -0.5), ..RotorConfig::default() };
        let err = FieldEngine::default()
            .field_at(&c, &lead_blocks(&c, 2), lambda(5.0), &Channel::neutron_ne(), 0.0)
            .unwrap_err();
        assert!(matches!(err, Error::Geometry(_)));
    }

    #[test]
    fn wrong_block_count() {
        let c = RotorConfig::default();
        let one = vec![MassBlock::lead(0.1, 2).unwrap()];
        assert!(FieldEngine::default().field_at(&c, &one, lambda(5.0), &Channel::neutron_ne(), 0.0).is_err());
    }

    #[test]
    fn two_blocks_double_the_frequency() {
        let c = RotorConfig::default();
        let e = FieldEngine::default();
        let ch = Channel::neutron_ne();
        let s = e.one_period(&c, &lead_blocks(&c, 6), lambda(5.0), &ch, 120).unwrap();
        let (f, _) = s.dominant_line().unwrap();
        assert!((f - 6.0).abs() < 1e-9);
        let scale = s.b_per_coupling.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        // Half-period symmetry sample by sample.
        for i in 0..60 {
            let a = s.b_per_coupling[i];
            let b = s.b_per_coupling[i + 60];
            assert!((a - b).abs() <= 1e-12 * scale, "{a} {b}");
        }

        let single = RotorConfig { block_phase_offsets: vec![0.0], ..c };
        let s1 = e.one_period(&single, &lead_blocks(&single, 6), lambda(5.0), &ch, 120).unwrap();
        assert!((s1.dominant_line().unwrap().0 - 3.0).abs() < 1e-9);
    }

    #[test]
    fn mean_is_the_dc_term() {
        let c = RotorConfig::default();
        let s = FieldEngine::default()
            .one_period(&c, &lead_blocks(&c, 4), lambda(5.0), &Channel::neutron_ne(), 90)
            .unwrap();
        let sig = s.rotor_harmonics().unwrap();
        assert!((sig.dc - s.mean()).abs() < 1e-12 * s.mean().abs());
        let centered: f64 = s.b_per_coupling.iter().map(|b| b - s.mean()).sum();
        assert!(centered.abs() < 1e-9 * s.mean().abs() * s.len() as f64);
    }

    #[test]
    fn reversing_rotation_flips_the_field() {
        let c = RotorConfig::default();
        let r = c.reversed();
        let e = FieldEngine::default();
        let ch = Channel::neutron_ne();
        let blocks = lead_blocks(&c, 4);
        for t in [0.0, 0.01, 0.05, 0.123] {
            let a = e.field_at(&c, &blocks, lambda(5.0), &ch, t).unwrap();
            let b = e.field_at(&r, &blocks, lambda(5.0), &ch, -t).unwrap();
            assert!((a + b).abs() <= 1e-12 * a.abs(), "{a} {b}");
        }
        // Same instant: the opposite-sense rotor is the mirror image in time.
        let a = e.field_at(&c, &blocks, lambda(5.0), &ch, 0.0).unwrap();
        let b = e.field_at(&r, &blocks, lambda(5.0), &ch, 0.0).unwrap();
        assert!((a + b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn quadrature_refinement_shrinks() {
        let c = RotorConfig::default();
        let e = FieldEngine::default();
        let ch = Channel::neutron_ne();
        let lam = lambda(0.03);
        let block = MassBlock::lead(0.1, 1).unwrap();
        let blocks = identical_blocks(&c, &block);
        let mut prev = f64::INFINITY;
        for n in [4, 8, 16] {
            let rep = e
                .check_convergence(&c, &blocks, lam, &ch, 0.0, &QuadratureSpec { n_per_axis: n, refinement_tolerance: 0.01 })
                .unwrap();
            assert!(rep.relative_change < prev, "n={n}: {} !< {prev}", rep.relative_change);
            prev = rep.relative_change;
        }
        assert!(prev < 0.01);
    }

    #[test]
    fn body_rotation_changes_field_by_a_few_percent() {
        let c = RotorConfig::default();
        let spin = RotorConfig { body_rotation: true, ..c.clone() };
        let e = FieldEngine::default();
        let ch = Channel::neutron_ne();
        let blocks = lead_blocks(&c, 8);
        let a = e.field_at(&c, &blocks, lambda(5.0), &ch, 0.0).unwrap();
        let b = e.field_at(&spin, &blocks, lambda(5.0), &ch, 0.0).unwrap();
        assert!(((a - b) / a).abs() < 0.05, "{a} {b}");
    }

    #[test]
    fn series_is_reproducible() {
        let c = RotorConfig::default();
        let e = FieldEngine::default();
        let blocks = lead_blocks(&c, 5);
        let ch = Channel::neutron_ne();
        let a = e.one_period(&c, &blocks, lambda(2.0), &ch, 48).unwrap();
        let b = e.one_period(&c, &blocks, lambda(2.0), &ch, 48).unwrap();
        assert!(a.b_per_coupling.iter().zip(&b.b_per_coupling).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(24))]

        #[test]
        fn field_is_linear_in_density_and_zeta(k in 0.1f64..10.0, t in 0.0f64..0.33) {
            let c = RotorConfig::default();
            let e = FieldEngine::default();
            let mut block = MassBlock::lead(0.1, 3).unwrap();
            let ch = Channel::neutron_ne();
            let base = e.field_at(&c, &identical_blocks(&c, &block), lambda(3.0), &ch, t).unwrap();
            block.nucleon_density *= k;
            let dense = e.field_at(&c, &identical_blocks(&c, &block), lambda(3.0), &ch, t).unwrap();
            proptest::prop_assert!((dense - k * base).abs() <= 1e-12 * (k * base).abs().max(1e3));
            let ch2 = Channel { zeta: ch.zeta / k.max(1.0), ..ch };
            block.nucleon_density /= k;
            let z = e.field_at(&c, &identical_blocks(&c, &block), lambda(3.0), &ch2, t).unwrap();
            proptest::prop_assert!((z - base / k.max(1.0)).abs() <= 1e-12 * base.abs().max(1e3));
        }

        #[test]
        fn superposition_over_blocks(t in 0.0f64..0.33) {
            let c = RotorConfig::default();
            let e = FieldEngine::default();
            let block = MassBlock::lead(0.1, 3).unwrap();
            let ch = Channel::neutron_ne();
            let both = e.field_at(&c, &identical_blocks(&c, &block), lambda(3.0), &ch, t).unwrap();
            let mut sum = 0.0;
            for i in 0..2 {
                let mut blocks = identical_blocks(&c, &block);
                blocks[1 - i].nucleon_density = 0.0;
                sum += e.field_at(&c, &blocks, lambda(3.0), &ch, t).unwrap();
            }
            proptest::prop_assert!((both - sum).abs() <= 1e-12 * both.abs().max(1e3));
        }

        #[test]
        fn point_source_distance_law(d in 0.3f64..3.0, lam in 0.05f64..50.0) {
            let c = RotorConfig {
                block_phase_offsets: vec![0.0],
                sensor_position: Vec3::new(d, 0.0, -0.5),
                ..RotorConfig::default()
            };
            let e = FieldEngine::default();
            let blocks = lead_blocks(&c, 1);
            let ch = Channel::neutron_ne();
            let b = e.field_at(&c, &blocks, lambda(lam), &ch, 0.0).unwrap();
            let c1 = RotorConfig { sensor_position: Vec3::new(1.0, 0.0, -0.5), ..c.clone() };
            let b1 = e.field_at(&c1, &blocks, lambda(lam), &ch, 0.0).unwrap();
            let inv = b * d * (d / lam).exp();
            let inv1 = b1 * (1.0 / lam).exp();
            proptest::prop_assert!(((inv - inv1) / inv1).abs() < 1e-9);
        }

        #[test]
        fn invariant_under_global_rotation(ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0, angle in 0.0f64..std::f64::consts::TAU) {
            let axis = match Vec3::new(ax, ay, az).normalized() { Some(a) => a, None => return Ok(()) };
            let c = RotorConfig { body_rotation: true, ..RotorConfig::default() };
            let rot = |v: Vec3| v.rotated_about(axis, angle);
            let r = RotorConfig {
                rotation_axis: rot(c.rotation_axis),
                reference_direction: rot(c.reference_direction),
                sensor_position: rot(c.sensor_position),
                sensitive_axis: rot(c.sensitive_axis),
                ..c.clone()
            };
            let e = FieldEngine::default();
            // The lattice is axis-aligned in the body frame, so only a point
            // source is exactly invariant.
            let blocks = lead_blocks(&c, 1);
            let ch = Channel::neutron_ne();
            let a = e.field_at(&c, &blocks, lambda(5.0), &ch, 0.02).unwrap();
            let b = e.field_at(&r, &blocks, lambda(5.0), &ch, 0.02).unwrap();
            proptest::prop_assert!(((a - b) / a).abs() < 1e-9, "{} {}", a, b);
        }
    }
}
