//! Distribution-system state estimation toolkit.
//!
//! The crate estimates bus voltage phasors of a radial distribution feeder
//! from sparse PMU measurements and load forecasts (pseudo-measurements).
//! Two estimators are provided:
//!
//! * [`wls`] — snapshot weighted least squares, the conventional baseline;
//! * [`pase`] — a past-aware ensemble Kalman filter that carries load
//!   information across time-steps and decorrelates forecast errors in time.
//!
//! [`theory`] computes a-priori steady-state error covariances for both
//! estimators so PMU placements and sensor budgets can be evaluated without
//! running simulations, and [`harness`] drives full closed-loop experiments
//! on the bundled 33-bus test feeder.

pub mod error;
pub mod harness;
pub mod loadmodel;
pub mod measurement;
pub mod network;
pub mod pase;
pub mod powerflow;
pub mod seed;
pub mod theory;
pub mod units;
pub mod wls;

pub use error::{Error, Result};
pub use loadmodel::{ForecastSet, HouseholdTrace, LoadEvolutionModel};
pub use measurement::{MeasurementSnapshot, PmuPlacement};
pub use network::{DlfMatrix, NetworkModel};
pub use pase::{Ensemble, PaseFilter};
pub use powerflow::{ComplexVoltageState, PolarVoltageState, PowerInjectionState};
pub use theory::{TheoryConfig, TheoryResult};
