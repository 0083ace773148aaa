pub mod beam;
pub mod caustics;
pub mod error;
pub mod field;
pub mod flow;
pub mod linearize;
pub mod ode;
pub mod quad;
pub mod sensitivity;
pub mod smooth;
pub mod stats;
pub mod xray;

pub use error::{Error, Result};
pub use field::{Domain, FieldKind, Lens, Potential, VelocityField};
pub use flow::PhasePoint;
pub use ode::Tolerance;
