//! Unit conventions and per-unit conversion helpers.
//!
//! Internal computations are carried out in SI units: volts, watts, vars,
//! ohms, radians, seconds. Errors and reported metrics are converted to
//! per-unit explicitly — voltages against the slack magnitude `V0`, powers
//! against a configurable base (1 MVA unless overridden).

/// Default power base for per-unit conversion, in VA.
pub const DEFAULT_BASE_POWER_VA: f64 = 1.0e6;

pub fn kw_to_w(kw: f64) -> f64 {
    kw * 1.0e3
}

pub fn kvar_to_var(kvar: f64) -> f64 {
    kvar * 1.0e3
}

/// Voltage in per-unit of the slack magnitude.
pub fn volts_to_pu(volts: f64, v0: f64) -> f64 {
    volts / v0
}

/// Power in per-unit of the base power.
pub fn va_to_pu(va: f64, base_va: f64) -> f64 {
    va / base_va
}
