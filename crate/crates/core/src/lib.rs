//! Forward model and analysis chain for a rotating-source search for
//! parity-odd spin–velocity interactions.

pub mod constants;
pub mod error;
pub mod field;
pub mod harmonics;
pub mod inference;
pub mod kinematics;
pub mod response;
pub mod series;
pub mod spectrum;
pub mod synth;
pub mod vec3;

pub use constants::{Channel, ChannelKind, Coupling, ForceRange, PhysicalConstants, SensorSpecies};
pub use error::{Error, Result};
pub use field::{FieldEngine, FieldTimeSeries, QuadratureSpec};
pub use kinematics::{MassBlock, RotorConfig};
pub use vec3::Vec3;
