//! Boundary backstepping control of stop-and-go waves in the linearized
//! two-class Aw-Rascle (AR) traffic model.
//!
//! The crate is `no_std` with `alloc`. It covers the whole numerical
//! pipeline:
//!
//! * [`model`]: area occupancy, traffic pressure, equilibria, linearization,
//!   characteristic speeds and free/congested regime classification.
//! * [`riemann`]: eigen-decomposition of the convection Jacobian, Riemann
//!   coordinates, the exponential rescaling and the combined transform
//!   `T(x)` between physical perturbations and the design coordinates `w`.
//! * [`kernels`]: backstepping kernels for the controller (`K`, `L11`) and the
//!   anti-collocated observer (`M`, `N11`) on the triangular domain.
//! * [`control`]: full-state ramp-metering law, observer propagation and the
//!   output-feedback law.
//! * [`sim`]: first-order upwind simulation and scenario orchestration.
//!
//! All quantities are SI internally (m, s, veh/m). See [`units`] for the
//! conversions used at the edges.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod control;
pub mod error;
pub mod kernels;
mod math;
pub mod model;
pub mod pipeline;
pub mod riemann;
pub mod sim;
pub mod units;

pub use error::{Error, Result};
pub use model::{EquilibriumState, Linearization, Regime, RoadParams, TrafficParams, VehicleClassParams};
pub use kernels::KernelSettings;
pub use pipeline::Pipeline;
pub use riemann::{CombinedTransform, DesignCoefficients, DesignModel, SpectralDecomposition};
pub use sim::{Scenario, SimConfig, TrafficField, Trajectory};
