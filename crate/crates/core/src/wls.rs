//! Snapshot weighted-least-squares state estimation.
//!
//! Each time-step is solved independently from a flat start: minimize
//! `J(y) = (z − f(y))ᵀ Σ⁻¹ (z − f(y))` over the polar voltage state, where
//! `z` stacks PMU readings and pseudo-measurements and `f` maps voltages to
//! the measurement space. Gauss-Newton with a numerically differenced
//! Jacobian keeps `f` pluggable; a simple backtracking rule guards against
//! objective increases.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::loadmodel::ForecastSet;
use crate::measurement::{pseudo_vector, MeasurementSnapshot, PmuPlacement};
use crate::network::NetworkModel;
use crate::powerflow::{injections_from_voltage, polar_to_complex, PolarVoltageState};

pub const WLS_TOL: f64 = 1e-9;
pub const WLS_MAX_ITER: usize = 50;

/// Relative finite-difference step for voltage magnitudes (of V0).
const STEP_MAG_REL: f64 = 1e-6;
/// Finite-difference step for angles, radians.
const STEP_ANG_RAD: f64 = 1e-8;
/// Relative floor applied to measurement standard deviations so exact
/// (zero-variance) measurements keep finite weights.
const WEIGHT_FLOOR_REL: f64 = 1e-9;

/// One snapshot estimation problem: stacked measurements, their variances,
/// and the network context.
pub struct WlsProblem<'a> {
    pub z: DVector<f64>,
    pub variances: DVector<f64>,
    pub net: &'a NetworkModel,
    pub placement: &'a PmuPlacement,
}

impl<'a> WlsProblem<'a> {
    pub fn new(
        z: DVector<f64>,
        variances: DVector<f64>,
        net: &'a NetworkModel,
        placement: &'a PmuPlacement,
    ) -> Result<Self> {
        let m = 2 * net.n_load() + 2 * placement.len();
        if z.len() != m || variances.len() != m {
            return Err(Error::Dimension(format!(
                "expected {m} stacked measurements, got {} values / {} variances",
                z.len(),
                variances.len()
            )));
        }
        if variances.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("negative measurement variance"));
        }
        Ok(Self {
            z,
            variances,
            net,
            placement,
        })
    }

    /// Assembles the stacked problem from a snapshot: PMU magnitudes, PMU
    /// angles, then the pseudo-measurement vector, weighted by the reported
    /// PMU variances and the forecast error model.
    pub fn from_snapshot(
        net: &'a NetworkModel,
        placement: &'a PmuPlacement,
        snapshot: &MeasurementSnapshot,
        forecasts: &ForecastSet,
    ) -> Result<Self> {
        let n = net.n_load();
        let k = placement.len();
        let m = 2 * n + 2 * k;
        if snapshot.pmu.values.len() != 2 * k || snapshot.pseudo.len() != 2 * n {
            return Err(Error::Dimension("snapshot does not match network/placement".into()));
        }
        let mut z = DVector::zeros(m);
        let mut variances = DVector::zeros(m);
        for j in 0..2 * k {
            z[j] = snapshot.pmu.values[j];
            variances[j] = snapshot.pmu.variances[j];
        }
        let d = pseudo_vector(forecasts);
        debug_assert_eq!(d, snapshot.pseudo);
        for i in 0..n {
            z[2 * k + i] = d[i];
            z[2 * k + n + i] = d[n + i];
            variances[2 * k + i] = forecasts.sigma_fp(i).powi(2);
            variances[2 * k + n + i] = forecasts.sigma_fq(i).powi(2);
        }
        Self::new(z, variances, net, placement)
    }

    /// Inverse variances with a relative floor per measurement family.
    fn weights(&self) -> DVector<f64> {
        let k = self.placement.len();
        let v0 = self.net.slack_voltage();
        let base = self.net.base_power();
        DVector::from_iterator(
            self.z.len(),
            self.variances.iter().enumerate().map(|(i, &var)| {
                let scale = if i < k {
                    v0
                } else if i < 2 * k {
                    1.0
                } else {
                    self.z[i].abs().max(1e-3 * base)
                };
                let floor = (WEIGHT_FLOOR_REL * scale).powi(2);
                1.0 / var.max(floor)
            }),
        )
    }
}

/// Maps a polar state to the stacked measurement space:
/// `[V_S; δ_S; P(y); Q(y)]` with the PMU blocks read directly off the state
/// and the injection blocks implied by the voltages through the network.
pub fn measurement_model_f(
    y: &PolarVoltageState,
    net: &NetworkModel,
    placement: &PmuPlacement,
) -> Result<DVector<f64>> {
    let n = net.n_load();
    if y.n_load() != n {
        return Err(Error::Dimension("state does not match network".into()));
    }
    let monitored = placement.monitored();
    let k = monitored.len();
    let mut f = DVector::zeros(2 * k + 2 * n);
    for (j, &bus) in monitored.iter().enumerate() {
        f[j] = y.magnitude(bus - 1);
        f[k + j] = y.angle(bus - 1);
    }
    let injections = injections_from_voltage(net, &polar_to_complex(y)?)?;
    for i in 0..n {
        f[2 * k + i] = injections.p(i);
        f[2 * k + n + i] = injections.q(i);
    }
    Ok(f)
}

#[derive(Debug, Clone)]
pub struct WlsSolution {
    pub state: PolarVoltageState,
    /// Final weighted objective value.
    pub objective: f64,
    pub iterations: usize,
    /// Objective after each accepted step, for diagnostics.
    pub objective_trace: Vec<f64>,
}

/// Gauss-Newton iteration on the normal equations with step backtracking.
///
/// The unknowns are internally scaled to `[V/V0; δ]` so the normal matrix is
/// well balanced. Stops when the scaled step falls below `tol`.
pub fn wls_estimate(
    problem: &WlsProblem,
    y0: &PolarVoltageState,
    tol: f64,
    max_iter: usize,
) -> Result<WlsSolution> {
    let n = problem.net.n_load();
    if y0.n_load() != n {
        return Err(Error::Dimension("initial state does not match network".into()));
    }
    if tol <= 0.0 {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let v0 = problem.net.slack_voltage();
    let weights = problem.weights();
    let dim = 2 * n;

    // Scaled unknowns u = [V / V0; angles].
    let to_u = |y: &PolarVoltageState| {
        let mut u = y.as_vector().clone();
        for i in 0..n {
            u[i] /= v0;
        }
        u
    };
    let to_y = |u: &DVector<f64>| {
        let mut y = u.clone();
        for i in 0..n {
            y[i] *= v0;
        }
        PolarVoltageState::new(y).expect("even length preserved")
    };
    let objective = |u: &DVector<f64>| -> Result<f64> {
        let f = measurement_model_f(&to_y(u), problem.net, problem.placement)?;
        Ok((0..problem.z.len())
            .map(|i| {
                let r = problem.z[i] - f[i];
                weights[i] * r * r
            })
            .sum())
    };

    let mut u = to_u(y0);
    let mut j_val = objective(&u)?;
    let mut trace = vec![j_val];

    for iter in 1..=max_iter {
        let f_center = measurement_model_f(&to_y(&u), problem.net, problem.placement)?;
        let m = f_center.len();

        // Central-difference Jacobian in the scaled coordinates.
        let mut jac = DMatrix::zeros(m, dim);
        for col in 0..dim {
            let h = if col < n { STEP_MAG_REL } else { STEP_ANG_RAD };
            let mut up = u.clone();
            let mut dn = u.clone();
            up[col] += h;
            dn[col] -= h;
            let fp = measurement_model_f(&to_y(&up), problem.net, problem.placement)?;
            let fm = measurement_model_f(&to_y(&dn), problem.net, problem.placement)?;
            for row in 0..m {
                jac[(row, col)] = (fp[row] - fm[row]) / (2.0 * h);
            }
        }

        let residual = &problem.z - &f_center;
        // Normal equations with the weight matrix folded in.
        let mut jtw = jac.transpose();
        for (col, mut c) in jtw.column_iter_mut().enumerate() {
            c *= weights[col];
        }
        let normal = &jtw * &jac;
        let rhs = &jtw * &residual;
        let chol = normal
            .cholesky()
            .ok_or_else(|| Error::Singular("normal matrix".into()))?;
        let delta = chol.solve(&rhs);

        // Backtrack if the objective would increase.
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=10 {
            let candidate = &u + &delta * alpha;
            let j_new = objective(&candidate)?;
            if j_new <= j_val {
                accepted = Some((candidate, j_new));
                break;
            }
            alpha *= 0.5;
        }
        let step_norm = delta.amax() * alpha;
        match accepted {
            Some((candidate, j_new)) => {
                u = candidate;
                j_val = j_new;
                trace.push(j_val);
            }
            None => {
                // No descent found; declare convergence only if the step is
                // already negligible.
                if step_norm < tol {
                    return Ok(WlsSolution {
                        state: to_y(&u),
                        objective: j_val,
                        iterations: iter,
                        objective_trace: trace,
                    });
                }
                return Err(Error::NonConvergence {
                    what: "Gauss-Newton backtracking".into(),
                    iterations: iter,
                    residual: j_val,
                });
            }
        }
        if step_norm < tol {
            return Ok(WlsSolution {
                state: to_y(&u),
                objective: j_val,
                iterations: iter,
                objective_trace: trace,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "weighted least squares".into(),
        iterations: max_iter,
        residual: j_val,
    })
}
