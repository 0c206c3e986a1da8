//! Physical constants, coupling channels and the scalar conversions shared
//! by the rest of the crate.
//!
//! Everything is SI internally; electron-volts only appear at the
//! presentation boundary ([`lambda_to_boson_mass`]).
//!
//! The ²¹Ne magnetic moment is not printed alongside the measurement it is
//! used for. The tabulated value −0.661797 μ_N is adopted; the sign is kept
//! in [`PhysicalConstants::mu_ne`] but only the magnitude enters field
//! conversions.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Nuclear spin of ²¹Ne.
const NE21_SPIN: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalConstants {
    /// Reduced Planck constant, J·s.
    pub hbar: f64,
    /// Speed of light, m/s.
    pub c: f64,
    /// Elementary charge, C (J per eV).
    pub elementary_charge: f64,
    /// Nuclear magneton, J/T.
    pub mu_n: f64,
    /// Bohr magneton, J/T.
    pub mu_b: f64,
    /// ²¹Ne nuclear magnetic moment, J/T (signed).
    pub mu_ne: f64,
    /// Electron gyromagnetic ratio, rad/s/T.
    pub gamma_e: f64,
    /// ²¹Ne gyromagnetic ratio magnitude, rad/s/T.
    pub gamma_n: f64,
    pub m_e: f64,
    pub m_p: f64,
    pub m_n: f64,
    /// Atomic mass unit, kg.
    pub m_u: f64,
}

impl PhysicalConstants {
    pub const CODATA: PhysicalConstants = {
        let hbar = 1.054_571_817e-34;
        let mu_n = 5.050_783_739_3e-27;
        let mu_ne = -0.661_797 * mu_n;
        PhysicalConstants {
            hbar,
            c: 299_792_458.0,
            elementary_charge: 1.602_176_634e-19,
            mu_n,
            mu_b: 9.274_010_065_7e-24,
            mu_ne,
            gamma_e: 1.760_859_630_23e11,
            gamma_n: -mu_ne / (NE21_SPIN * hbar),
            m_e: 9.109_383_713_9e-31,
            m_p: 1.672_621_925_95e-27,
            m_n: 1.674_927_500_56e-27,
            m_u: 1.660_539_068_92e-27,
        }
    };

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hbar", self.hbar),
            ("c", self.c),
            ("elementary_charge", self.elementary_charge),
            ("mu_n", self.mu_n),
            ("mu_b", self.mu_b),
            ("gamma_e", self.gamma_e),
            ("gamma_n", self.gamma_n),
            ("m_e", self.m_e),
            ("m_p", self.m_p),
            ("m_n", self.m_n),
            ("m_u", self.m_u),
        ];
        for (name, v) in positive {
            ensure(v.is_finite() && v > 0.0, || {
                Error::Domain(format!("constant {name} must be finite and positive, got {v}"))
            })?;
        }
        ensure(self.mu_ne.is_finite() && self.mu_ne != 0.0, || {
            Error::Domain("mu_ne must be finite and non-zero".into())
        })
    }

    /// ħc in eV·m.
    pub fn hbar_c_ev_m(&self) -> f64 {
        self.hbar * self.c / self.elementary_charge
    }

    /// Nucleons per kilogram of ordinary matter (1/m_u).
    pub fn nucleons_per_kg(&self) -> f64 {
        1.0 / self.m_u
    }

    pub fn lambda_to_boson_mass(&self, lambda: ForceRange) -> f64 {
        self.hbar_c_ev_m() / lambda.meters()
    }

    pub fn boson_mass_to_lambda(&self, mass_ev: f64) -> Result<ForceRange> {
        ensure(mass_ev.is_finite() && mass_ev > 0.0, || {
            Error::Domain(format!("boson mass must be positive, got {mass_ev} eV"))
        })?;
        ForceRange::new(self.hbar_c_ev_m() / mass_ev)
    }

    /// Magnetic moment of the sensing species, J/T (magnitude).
    pub fn sensor_moment(&self, species: SensorSpecies) -> f64 {
        match species {
            SensorSpecies::Ne21 => self.mu_ne.abs(),
            SensorSpecies::Rb => self.mu_b,
        }
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::CODATA
    }
}

/// Yukawa range λ = ħ/(m_b c), in metres. Infinite range is allowed.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ForceRange(f64);

impl ForceRange {
    pub fn new(lambda: f64) -> Result<Self> {
        ensure(lambda > 0.0 && !lambda.is_nan(), || {
            Error::Domain(format!("force range must be positive, got {lambda} m"))
        })?;
        Ok(ForceRange(lambda))
    }

    pub const INFINITE: ForceRange = ForceRange(f64::INFINITY);

    pub fn meters(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ForceRange {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        ForceRange::new(v)
    }
}

impl From<ForceRange> for f64 {
    fn from(r: ForceRange) -> f64 {
        r.0
    }
}

/// Boson mass in eV for a force range in metres.
pub fn lambda_to_boson_mass(lambda: f64) -> Result<f64> {
    Ok(PhysicalConstants::CODATA.lambda_to_boson_mass(ForceRange::new(lambda)?))
}

/// Converts g_A·g_V into the f₁₂₊₁₃ coefficient: 2·g·(1 + m_i/m_j).
pub fn f_coefficient_from_g(g_product: f64, m_i: f64, m_j: f64) -> Result<f64> {
    ensure(m_j > 0.0 && m_j.is_finite(), || {
        Error::Domain(format!("source fermion mass must be positive, got {m_j}"))
    })?;
    ensure(m_i >= 0.0 && m_i.is_finite(), || {
        Error::Domain(format!("probe fermion mass must be non-negative, got {m_i}"))
    })?;
    Ok(2.0 * g_product * (1.0 + m_i / m_j))
}

/// Nucleon number density (1/m³) from a mass density (kg/m³) and nucleons per kg.
pub fn nucleon_number_density(mass_density: f64, nucleons_per_kg: f64) -> Result<f64> {
    ensure(mass_density > 0.0 && mass_density.is_finite(), || {
        Error::Domain(format!("mass density must be positive, got {mass_density}"))
    })?;
    ensure(nucleons_per_kg > 0.0 && nucleons_per_kg.is_finite(), || {
        Error::Domain(format!("nucleons per kg must be positive, got {nucleons_per_kg}"))
    })?;
    Ok(mass_density * nucleons_per_kg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelKind {
    NeutronNucleon,
    ProtonNucleon,
    ElectronNucleon,
}

/// Spin species whose precession carries the signal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensorSpecies {
    Ne21,
    Rb,
}

/// A coupling channel: which fermion spin couples, through which sensor
/// species, and with what spin fraction ζ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Channel {
    pub kind: ChannelKind,
    pub species: SensorSpecies,
    pub zeta: f64,
    /// Magnetic moment of the sensing species, J/T.
    pub mu_sensor: f64,
}

impl Channel {
    pub fn new(kind: ChannelKind, species: SensorSpecies, zeta: f64, mu_sensor: f64) -> Result<Self> {
        ensure(zeta > 0.0 && zeta <= 1.0, || {
            Error::Domain(format!("spin fraction must lie in (0, 1], got {zeta}"))
        })?;
        ensure(mu_sensor.is_finite() && mu_sensor != 0.0, || {
            Error::Domain("sensor magnetic moment must be finite and non-zero".into())
        })?;
        Ok(Channel { kind, species, zeta, mu_sensor })
    }

    /// Neutron spin in ²¹Ne (ζⁿ = 0.58).
    pub fn neutron_ne() -> Self {
        Self::preset(ChannelKind::NeutronNucleon, SensorSpecies::Ne21, 0.58)
    }

    /// Proton spin in ²¹Ne (ζᵖ = 0.04).
    pub fn proton_ne() -> Self {
        Self::preset(ChannelKind::ProtonNucleon, SensorSpecies::Ne21, 0.04)
    }

    /// Proton spin in Rb at 50 % polarization (ζ = 0.29).
    pub fn proton_rb() -> Self {
        Self::preset(ChannelKind::ProtonNucleon, SensorSpecies::Rb, 0.29)
    }

    /// Electron spin in Rb at 50 % polarization (ζ = 0.13).
    pub fn electron_rb() -> Self {
        Self::preset(ChannelKind::ElectronNucleon, SensorSpecies::Rb, 0.13)
    }

    fn preset(kind: ChannelKind, species: SensorSpecies, zeta: f64) -> Self {
        Channel {
            kind,
            species,
            zeta,
            mu_sensor: PhysicalConstants::CODATA.sensor_moment(species),
        }
    }

    /// Looks up a preset by its short name (`neutron`, `proton-ne`, `proton-rb`, `electron`).
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "neutron" | "n-N" | "neutron-ne" => Some(Self::neutron_ne()),
            "proton-ne" => Some(Self::proton_ne()),
            "proton" | "p-N" | "proton-rb" => Some(Self::proton_rb()),
            "electron" | "e-N" | "electron-rb" => Some(Self::electron_rb()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match (self.kind, self.species) {
            (ChannelKind::NeutronNucleon, _) => "neutron",
            (ChannelKind::ProtonNucleon, SensorSpecies::Ne21) => "proton-ne",
            (ChannelKind::ProtonNucleon, SensorSpecies::Rb) => "proton-rb",
            (ChannelKind::ElectronNucleon, _) => "electron",
        }
    }

    /// ζ/|μ_sensor|, the factor turning an integrated potential into a field.
    pub fn field_factor(&self) -> f64 {
        self.zeta / self.mu_sensor.abs()
    }
}

/// A dimensionless coupling product g_A·g_V for one channel. Sign matters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub g_product: f64,
    pub channel: Channel,
}

impl Coupling {
    pub fn new(g_product: f64, channel: Channel) -> Result<Self> {
        ensure(g_product.is_finite(), || Error::Domain("coupling must be finite".into()))?;
        Ok(Coupling { g_product, channel })
    }

    /// The f₁₂₊₁₃ coefficient for the probe/source mass pair.
    pub fn f_coefficient(&self, m_probe: f64, m_source: f64) -> Result<f64> {
        f_coefficient_from_g(self.g_product, m_probe, m_source)
    }
}
