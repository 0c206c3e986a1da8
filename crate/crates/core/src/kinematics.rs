//! Rotor geometry, source-mass elements and the simulated encoder stream.
//!
//! Frame: the hub sits at the origin and the rotor turns about
//! `rotation_axis` (right-handed). A block at rotor angle θ has its center at
//! `R (cos θ · u + sin θ · w)`, where `u = reference_direction` points to the
//! lowest point of the circle and `w = axis × u`. With the defaults (axis +x,
//! lowest point −z) a block at θ = 0 moves along +y, which is also the
//! default sensitive axis.
//!
//! Blocks revolve without spinning about their own centers unless
//! `body_rotation` is set, in which case they turn rigidly with the rotor.

use std::f64::consts::{PI, TAU};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::constants::{nucleon_number_density, PhysicalConstants};
use crate::error::{ensure, Error, Result};
use crate::vec3::Vec3;

const ORTHOGONALITY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RotorConfig {
    /// Radius of the circle traced by block centers, m.
    pub ring_radius: f64,
    /// Rotation frequency, Hz.
    pub rotation_freq: f64,
    /// Cube side, m.
    pub block_side: f64,
    /// Rotor angle of each block at t = 0, rad in [0, 2π).
    pub block_phase_offsets: Vec<f64>,
    pub rotation_axis: Vec3,
    /// Direction from the hub to the lowest point of the circle.
    pub reference_direction: Vec3,
    /// Sensor location relative to the hub, m.
    pub sensor_position: Vec3,
    pub sensitive_axis: Vec3,
    pub body_rotation: bool,
    /// Encoder angle noise (1σ), rad.
    pub encoder_sigma: f64,
}

impl Default for RotorConfig {
    fn default() -> Self {
        RotorConfig {
            ring_radius: 0.500,
            rotation_freq: 3.0,
            block_side: 0.1000,
            block_phase_offsets: vec![0.0, PI],
            rotation_axis: Vec3::X,
            reference_direction: -Vec3::Z,
            sensor_position: Vec3::new(0.525, 0.0, -0.500),
            sensitive_axis: Vec3::Y,
            body_rotation: false,
            encoder_sigma: 4.9e-6,
        }
    }
}

impl RotorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ring_radius", self.ring_radius),
            ("rotation_freq", self.rotation_freq),
            ("block_side", self.block_side),
        ];
        for (name, v) in positive {
            ensure(v.is_finite() && v > 0.0, || {
                Error::Config(format!("rotor.{name} must be positive, got {v}"))
            })?;
        }
        ensure(!self.block_phase_offsets.is_empty(), || {
            Error::Config("rotor needs at least one block".into())
        })?;
        for &phi in &self.block_phase_offsets {
            ensure((0.0..TAU).contains(&phi), || {
                Error::Config(format!("block phase offset {phi} outside [0, 2π)"))
            })?;
        }
        ensure(self.encoder_sigma >= 0.0 && self.encoder_sigma.is_finite(), || {
            Error::Config("encoder sigma must be non-negative".into())
        })?;
        ensure(self.sensor_position.is_finite(), || {
            Error::Config("sensor position must be finite".into())
        })?;
        let axis = unit(self.rotation_axis, "rotation_axis")?;
        let down = unit(self.reference_direction, "reference_direction")?;
        unit(self.sensitive_axis, "sensitive_axis")?;
        ensure(axis.dot(down).abs() < ORTHOGONALITY_TOL, || {
            Error::Config("reference_direction must be perpendicular to rotation_axis".into())
        })
    }

    pub fn block_count(&self) -> usize {
        self.block_phase_offsets.len()
    }

    pub fn angular_freq(&self) -> f64 {
        TAU * self.rotation_freq
    }

    /// Rotor angle of block `index` at time `t` (unwrapped).
    pub fn block_angle(&self, index: usize, t: f64) -> f64 {
        self.angular_freq() * t + self.block_phase_offsets[index]
    }

    /// Largest N such that the block layout is invariant under a 2π/N turn.
    /// Identical blocks at {0, π} give 2.
    pub fn symmetry_order(&self) -> usize {
        let n = self.block_count();
        let wrap = |a: f64| a.rem_euclid(TAU);
        let close = |a: f64, b: f64| {
            let d = (a - b).rem_euclid(TAU);
            d < 1e-9 || TAU - d < 1e-9
        };
        (1..=n)
            .rev()
            .find(|&order| {
                n.is_multiple_of(order)
                    && self.block_phase_offsets.iter().all(|&p| {
                        let q = wrap(p + TAU / order as f64);
                        self.block_phase_offsets.iter().any(|&o| close(o, q))
                    })
            })
            .unwrap_or(1)
    }

    /// Fundamental of the source signal: symmetry order × rotation frequency.
    pub fn modulation_freq(&self) -> f64 {
        self.symmetry_order() as f64 * self.rotation_freq
    }

    /// Same rotor turning the other way.
    pub fn reversed(&self) -> Self {
        RotorConfig { rotation_axis: -self.rotation_axis, ..self.clone() }
    }

    pub(crate) fn frame(&self) -> Frame {
        let axis = self.rotation_axis.normalized().unwrap_or(Vec3::X);
        let down = self.reference_direction.normalized().unwrap_or(-Vec3::Z);
        Frame { axis, u: down, w: axis.cross(down) }
    }
}

fn unit(v: Vec3, name: &str) -> Result<Vec3> {
    v.normalized()
        .ok_or_else(|| Error::Config(format!("rotor.{name} must be a non-zero vector")))
}

/// Orthonormal rotor basis.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Frame {
    pub axis: Vec3,
    pub u: Vec3,
    pub w: Vec3,
}

impl Frame {
    #[inline]
    pub fn center(&self, radius: f64, angle: f64) -> Vec3 {
        let (s, c) = angle.sin_cos();
        (self.u * c + self.w * s) * radius
    }

    #[inline]
    pub fn center_velocity(&self, radius: f64, omega: f64, angle: f64) -> Vec3 {
        let (s, c) = angle.sin_cos();
        (self.w * c - self.u * s) * (radius * omega)
    }
}

/// One lattice cell of a discretized block, in the block's body frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub offset: Vec3,
    pub volume: f64,
}

/// Regular `n³` lattice of equal cells filling a cube of the given side,
/// centered on the origin. Cells are ordered x-major, then y, then z.
pub fn discretize_block(side: f64, n_per_axis: usize) -> Result<Vec<GridCell>> {
    ensure(n_per_axis >= 1, || Error::Domain("n_per_axis must be at least 1".into()))?;
    ensure(side > 0.0 && side.is_finite(), || {
        Error::Domain(format!("block side must be positive, got {side}"))
    })?;
    let h = side / n_per_axis as f64;
    let volume = h * h * h;
    let coord = |i: usize| (i as f64 + 0.5) * h - 0.5 * side;
    let mut cells = Vec::with_capacity(n_per_axis.pow(3));
    for i in 0..n_per_axis {
        for j in 0..n_per_axis {
            for k in 0..n_per_axis {
                cells.push(GridCell { offset: Vec3::new(coord(i), coord(j), coord(k)), volume });
            }
        }
    }
    Ok(cells)
}

/// A cubic source mass with its body-frame quadrature grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassBlock {
    pub side: f64,
    /// Mass used for budget scaling, kg.
    pub mass: f64,
    /// Nucleons per m³ used for the field integral.
    pub nucleon_density: f64,
    pub body_grid: Vec<GridCell>,
}

impl MassBlock {
    pub fn new(side: f64, mass: f64, nucleon_density: f64, n_per_axis: usize) -> Result<Self> {
        ensure(mass >= 0.0 && mass.is_finite(), || {
            Error::Domain(format!("block mass must be non-negative, got {mass}"))
        })?;
        ensure(nucleon_density >= 0.0 && nucleon_density.is_finite(), || {
            Error::Domain("nucleon density must be non-negative".into())
        })?;
        Ok(MassBlock { side, mass, nucleon_density, body_grid: discretize_block(side, n_per_axis)? })
    }

    /// Block of uniform material with the given mass density; its mass is density × side³.
    pub fn uniform(side: f64, mass_density: f64, n_per_axis: usize) -> Result<Self> {
        let density =
            nucleon_number_density(mass_density, PhysicalConstants::CODATA.nucleons_per_kg())?;
        Self::new(side, mass_density * side.powi(3), density, n_per_axis)
    }

    /// Lead cube (11.3 g/cm³) of the given side.
    pub fn lead(side: f64, n_per_axis: usize) -> Result<Self> {
        Self::uniform(side, LEAD_DENSITY, n_per_axis)
    }

    pub fn n_per_axis(&self) -> usize {
        (self.body_grid.len() as f64).cbrt().round() as usize
    }

    /// Same block on a different lattice.
    pub fn rediscretized(&self, n_per_axis: usize) -> Result<Self> {
        Ok(MassBlock { body_grid: discretize_block(self.side, n_per_axis)?, ..self.clone() })
    }

    pub fn grid_volume(&self) -> f64 {
        self.body_grid.iter().map(|c| c.volume).sum()
    }
}

/// Lead mass density, kg/m³.
pub const LEAD_DENSITY: f64 = 11_300.0;

/// Lab-frame position and velocity of a body point of block `block_index` at time `t`.
pub fn element_state(
    config: &RotorConfig,
    block_index: usize,
    body_offset: Vec3,
    t: f64,
) -> Result<(Vec3, Vec3)> {
    let count = config.block_count();
    ensure(block_index < count, || Error::BlockIndex { index: block_index, count })?;
    Ok(element_state_unchecked(config, &config.frame(), block_index, body_offset, t))
}

#[inline]
pub(crate) fn element_state_unchecked(
    config: &RotorConfig,
    frame: &Frame,
    block_index: usize,
    body_offset: Vec3,
    t: f64,
) -> (Vec3, Vec3) {
    let angle = config.block_angle(block_index, t);
    let omega = config.angular_freq();
    let center = frame.center(config.ring_radius, angle);
    if config.body_rotation {
        let offset = body_offset.rotated_about(frame.axis, angle);
        let position = center + offset;
        (position, frame.axis.cross(position) * omega)
    } else {
        (
            center + body_offset,
            frame.center_velocity(config.ring_radius, omega, angle),
        )
    }
}

/// True when `point` lies inside (or on the surface of) block `block_index` at time `t`.
pub fn block_contains(config: &RotorConfig, block_index: usize, t: f64, point: Vec3) -> bool {
    let frame = config.frame();
    let angle = config.block_angle(block_index, t);
    let mut rel = point - frame.center(config.ring_radius, angle);
    if config.body_rotation {
        rel = rel.rotated_about(frame.axis, -angle);
    }
    let half = 0.5 * config.block_side;
    rel.0.iter().all(|c| c.abs() <= half)
}

/// One encoder reading of the rotor angle of block 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSample {
    pub t: f64,
    /// Angle in [0, 2π).
    pub angle: f64,
    pub sigma_angle: f64,
}

/// Simulated encoder readout at `sample_rate` over the closed interval
/// `[0, duration]`, i.e. `round(duration·rate) + 1` samples, with Gaussian
/// angle noise of `config.encoder_sigma` drawn from ChaCha8 seeded by `seed`.
pub fn encoder_stream(
    config: &RotorConfig,
    duration: f64,
    sample_rate: f64,
    seed: u64,
) -> Result<Vec<EncoderSample>> {
    ensure(duration > 0.0 && duration.is_finite(), || {
        Error::Domain(format!("duration must be positive, got {duration}"))
    })?;
    ensure(sample_rate > 0.0 && sample_rate.is_finite(), || {
        Error::Domain(format!("sample rate must be positive, got {sample_rate}"))
    })?;
    let n = (duration * sample_rate).round() as usize;
    let sigma = config.encoder_sigma;
    let offset_turns = config.block_phase_offsets.first().copied().unwrap_or(0.0) / TAU;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..=n)
        .map(|i| {
            let t = i as f64 / sample_rate;
            let turns = config.rotation_freq * t + offset_turns;
            let exact = TAU * (turns - turns.floor());
            let noise = if sigma > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                sigma * z
            } else {
                0.0
            };
            let mut angle = (exact + noise).rem_euclid(TAU);
            if angle >= TAU {
                angle = 0.0;
            }
            EncoderSample { t, angle, sigma_angle: sigma }
        })
        .collect())
}

/// Rotor angle at the first sample of an encoder stream.
pub fn encoder_start_angle(samples: &[EncoderSample]) -> Option<f64> {
    samples.first().map(|s| s.angle)
}

/// Number of 2π → 0 wrap events in an encoder stream.
pub fn count_wraps(samples: &[EncoderSample]) -> usize {
    samples.windows(2).filter(|w| w[1].angle < w[0].angle - PI).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let c = RotorConfig::default();
        c.validate().unwrap();
        assert_eq!(c.symmetry_order(), 2);
        assert_eq!(c.modulation_freq(), 6.0);
        let one = RotorConfig { block_phase_offsets: vec![0.0], ..c.clone() };
        assert_eq!(one.symmetry_order(), 1);
        let uneven = RotorConfig { block_phase_offsets: vec![0.0, 1.0], ..c };
        assert_eq!(uneven.symmetry_order(), 1);
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = RotorConfig::default();
        assert!(RotorConfig { ring_radius: 0.0, ..base.clone() }.validate().is_err());
        assert!(RotorConfig { block_phase_offsets: vec![], ..base.clone() }.validate().is_err());
        assert!(RotorConfig { block_phase_offsets: vec![7.0], ..base.clone() }.validate().is_err());
        assert!(RotorConfig { reference_direction: Vec3::X, ..base.clone() }.validate().is_err());
        assert!(RotorConfig { sensitive_axis: Vec3::ZERO, ..base }.validate().is_err());
    }

    #[test]
    fn lowest_point_velocity_is_horizontal() {
        let c = RotorConfig::default();
        let (p, v) = element_state(&c, 0, Vec3::ZERO, 0.0).unwrap();
        assert!((p - Vec3::new(0.0, 0.0, -0.5)).norm() < 1e-15);
        assert!((v.norm() - TAU * 3.0 * 0.5).abs() < 1e-12);
        assert!((v.norm() - 9.42477796).abs() < 1e-7);
        assert!(v.z().abs() < 1e-12 && v.y() > 0.0);
    }

    #[test]
    fn state_is_periodic() {
        let c = RotorConfig { body_rotation: true, ..RotorConfig::default() };
        let off = Vec3::new(0.01, -0.02, 0.03);
        let (p0, v0) = element_state(&c, 1, off, 0.123).unwrap();
        let (p1, v1) = element_state(&c, 1, off, 0.123 + 1.0 / 3.0).unwrap();
        assert!((p0 - p1).norm() < 1e-12 && (v0 - v1).norm() < 1e-10);
    }

    #[test]
    fn half_turn_swaps_the_two_blocks() {
        let c = RotorConfig::default();
        let t = 0.071;
        let (a0, va0) = element_state(&c, 0, Vec3::ZERO, t).unwrap();
        let (b1, vb1) = element_state(&c, 1, Vec3::ZERO, t + 1.0 / 6.0).unwrap();
        assert!((a0 - b1).norm() < 1e-12 && (va0 - vb1).norm() < 1e-12);
    }

    #[test]
    fn out_of_range_block_index() {
        let err = element_state(&RotorConfig::default(), 2, Vec3::ZERO, 0.0).unwrap_err();
        assert_eq!(err, Error::BlockIndex { index: 2, count: 2 });
    }

    #[test]
    fn discretization_examples() {
        let one = discretize_block(0.1, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].offset, Vec3::ZERO);
        assert!((one[0].volume - 1e-3).abs() < 1e-18);

        let two = discretize_block(0.1, 2).unwrap();
        assert_eq!(two.len(), 8);
        assert!(two.iter().all(|c| (c.volume - 1.25e-4).abs() < 1e-18));

        let ten = discretize_block(0.1, 10).unwrap();
        let mean = ten.iter().fold(Vec3::ZERO, |a, c| a + c.offset) * (1.0 / ten.len() as f64);
        assert!(mean.norm() < 1e-12);
        let vol: f64 = ten.iter().map(|c| c.volume).sum();
        assert!((vol - 1e-3).abs() / 1e-3 < 1e-9);
        assert!(discretize_block(0.1, 0).is_err());
    }

    #[test]
    fn lead_block_mass_matches_density() {
        let b = MassBlock::lead(0.1, 4).unwrap();
        assert!(((b.mass / 0.1f64.powi(3)) - LEAD_DENSITY).abs() / LEAD_DENSITY < 1e-6);
        assert!((b.grid_volume() - 1e-3).abs() / 1e-3 < 1e-9);
        assert_eq!(b.n_per_axis(), 4);
    }

    #[test]
    fn containment() {
        let c = RotorConfig::default();
        assert!(block_contains(&c, 0, 0.0, Vec3::new(0.01, 0.02, -0.49)));
        assert!(!block_contains(&c, 0, 0.0, c.sensor_position));
        assert!(!block_contains(&c, 1, 0.0, Vec3::new(0.0, 0.0, -0.5)));
    }

    #[test]
    fn noiseless_encoder_is_a_sawtooth() {
        let c = RotorConfig { encoder_sigma: 0.0, ..RotorConfig::default() };
        let s = encoder_stream(&c, 1.0, 1000.0, 1).unwrap();
        assert_eq!(s.len(), 1001);
        assert_eq!(count_wraps(&s), 3);
        for w in s.windows(2) {
            let d = (w[1].angle - w[0].angle).rem_euclid(TAU);
            assert!((d - TAU * 3.0 / 1000.0).abs() < 1e-9);
        }
    }

    #[test]
    fn encoder_noise_scale() {
        let c = RotorConfig::default();
        let s = encoder_stream(&c, 1000.0, 1000.0, 7).unwrap();
        assert!(s.len() >= 1_000_000);
        let resid: Vec<f64> = s
            .iter()
            .map(|e| {
                let turns = 3.0 * e.t;
                let exact = TAU * (turns - turns.floor());
                let d = e.angle - exact;
                d - TAU * (d / TAU).round()
            })
            .collect();
        let mean = resid.iter().sum::<f64>() / resid.len() as f64;
        let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (resid.len() - 1) as f64;
        let sd = var.sqrt();
        assert!((sd - 4.9e-6).abs() / 4.9e-6 < 0.1, "{sd}");
        assert_eq!(encoder_stream(&c, 1.0, 100.0, 7).unwrap(), encoder_stream(&c, 1.0, 100.0, 7).unwrap());
    }

    proptest::proptest! {
        #[test]
        fn speed_matches_path_radius_and_finite_difference(
            t in 0.0f64..1.0,
            ox in -0.05f64..0.05, oy in -0.05f64..0.05, oz in -0.05f64..0.05,
            spin in proptest::bool::ANY,
        ) {
            let c = RotorConfig { body_rotation: spin, ..RotorConfig::default() };
            let off = Vec3::new(ox, oy, oz);
            let (p, v) = element_state(&c, 0, off, t).unwrap();
            // Radius of the circular path of this point.
            let radius = if spin {
                let along = c.rotation_axis.dot(p);
                (p - c.rotation_axis * along).norm()
            } else {
                c.ring_radius
            };
            proptest::prop_assert!((v.norm() - c.angular_freq() * radius).abs() <= 1e-9 * v.norm().max(1.0));
            let h = 1e-6;
            let (pp, _) = element_state(&c, 0, off, t + h).unwrap();
            let (pm, _) = element_state(&c, 0, off, t - h).unwrap();
            let fd = (pp - pm) * (0.5 / h);
            proptest::prop_assert!((fd - v).norm() <= 1e-6 * v.norm());
        }
    }
}
