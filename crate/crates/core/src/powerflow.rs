//! Power flow on the radial feeder.
//!
//! `solve_bfs` is the backward/forward sweep solver used both to produce
//! ground-truth voltages in simulations and as the observation function
//! mapping power-injection states to PMU readings. `linear_pf` is the affine
//! approximation built on the DLF matrix. All state vectors cover load buses
//! only; the slack is pinned at (V0, 0).

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::network::{DlfMatrix, NetworkModel};

/// Max voltage change (volts) between sweeps considered converged.
pub const BFS_TOL_V: f64 = 1e-6;
/// Iteration cap for the sweep; exceeding it signals infeasible loading.
pub const BFS_MAX_ITER: usize = 100;

/// Power-injection state `[P; Q]` over load buses, watts/vars.
/// Injections are signed: consuming buses carry negative entries.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerInjectionState {
    x: DVector<f64>,
}

impl PowerInjectionState {
    pub fn new(x: DVector<f64>) -> Result<Self> {
        if x.len() % 2 != 0 {
            return Err(Error::Dimension(format!(
                "injection state length {} is odd",
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("injection state has non-finite entries"));
        }
        Ok(Self { x })
    }

    pub fn zeros(n_load: usize) -> Self {
        Self {
            x: DVector::zeros(2 * n_load),
        }
    }

    /// Builds the state from per-bus (P, Q) injections in load-bus order.
    pub fn from_injections(pq: &[(f64, f64)]) -> Self {
        let n = pq.len();
        let mut x = DVector::zeros(2 * n);
        for (i, &(p, q)) in pq.iter().enumerate() {
            x[i] = p;
            x[n + i] = q;
        }
        Self { x }
    }

    /// Negates consumption values into injections (loads draw power).
    pub fn from_loads(pq_load: &[(f64, f64)]) -> Self {
        let negated: Vec<(f64, f64)> = pq_load.iter().map(|&(p, q)| (-p, -q)).collect();
        Self::from_injections(&negated)
    }

    pub fn n_load(&self) -> usize {
        self.x.len() / 2
    }

    pub fn p(&self, i: usize) -> f64 {
        self.x[i]
    }

    pub fn q(&self, i: usize) -> f64 {
        self.x[self.n_load() + i]
    }

    /// Complex injection at load-state index `i` (bus `i + 1`).
    pub fn injection(&self, i: usize) -> Complex64 {
        Complex64::new(self.p(i), self.q(i))
    }

    pub fn injections(&self) -> DVector<Complex64> {
        DVector::from_iterator(self.n_load(), (0..self.n_load()).map(|i| self.injection(i)))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.x
    }
}

/// Polar voltage state `[V; δ]` over load buses (volts, radians).
#[derive(Debug, Clone, PartialEq)]
pub struct PolarVoltageState {
    y: DVector<f64>,
}

impl PolarVoltageState {
    pub fn new(y: DVector<f64>) -> Result<Self> {
        if y.len() % 2 != 0 {
            return Err(Error::Dimension(format!(
                "polar state length {} is odd",
                y.len()
            )));
        }
        Ok(Self { y })
    }

    /// Flat profile: every load bus at (V0, 0).
    pub fn flat(net: &NetworkModel) -> Self {
        let n = net.n_load();
        let mut y = DVector::zeros(2 * n);
        for i in 0..n {
            y[i] = net.slack_voltage();
        }
        Self { y }
    }

    pub fn n_load(&self) -> usize {
        self.y.len() / 2
    }

    pub fn magnitude(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn angle(&self, i: usize) -> f64 {
        self.y[self.n_load() + i]
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn as_vector_mut(&mut self) -> &mut DVector<f64> {
        &mut self.y
    }
}

/// Complex voltage phasors over load buses (volts).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVoltageState {
    w: DVector<Complex64>,
}

impl ComplexVoltageState {
    pub fn new(w: DVector<Complex64>) -> Self {
        Self { w }
    }

    pub fn n_load(&self) -> usize {
        self.w.len()
    }

    pub fn voltage(&self, i: usize) -> Complex64 {
        self.w[i]
    }

    pub fn as_vector(&self) -> &DVector<Complex64> {
        &self.w
    }
}

/// Converts a polar state to phasors. Fails on nonpositive magnitudes.
pub fn polar_to_complex(y: &PolarVoltageState) -> Result<ComplexVoltageState> {
    let n = y.n_load();
    let mut w = DVector::from_element(n, Complex64::new(0.0, 0.0));
    for i in 0..n {
        let v = y.magnitude(i);
        if v <= 0.0 {
            return Err(Error::invalid(format!(
                "nonpositive voltage magnitude {v} at state index {i}"
            )));
        }
        w[i] = Complex64::from_polar(v, y.angle(i));
    }
    Ok(ComplexVoltageState::new(w))
}

/// Converts phasors to polar form. Fails on (near-)zero magnitudes.
pub fn complex_to_polar(w: &ComplexVoltageState) -> Result<PolarVoltageState> {
    let n = w.n_load();
    let mut y = DVector::zeros(2 * n);
    for i in 0..n {
        let v = w.voltage(i);
        let mag = v.norm();
        if mag <= 0.0 {
            return Err(Error::invalid(format!(
                "zero voltage magnitude at state index {i}"
            )));
        }
        y[i] = mag;
        y[n + i] = v.arg();
    }
    PolarVoltageState::new(y)
}

/// Backward/forward sweep power flow.
///
/// Backward sweep accumulates branch currents from the leaves using bus
/// currents `conj(s_i / v_i)`; the forward sweep propagates voltages from
/// the slack. Always starts flat (all buses at V0) for reproducibility.
pub fn solve_bfs(
    net: &NetworkModel,
    x: &PowerInjectionState,
    tol_v: f64,
    max_iter: usize,
) -> Result<ComplexVoltageState> {
    if x.n_load() != net.n_load() {
        return Err(Error::Dimension(format!(
            "state covers {} load buses, network has {}",
            x.n_load(),
            net.n_load()
        )));
    }
    if tol_v <= 0.0 {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let n = net.n_buses();
    let v0 = Complex64::new(net.slack_voltage(), 0.0);
    let collapse = 1e-6 * net.slack_voltage();

    let mut v = vec![v0; n];
    let mut subtree = vec![Complex64::new(0.0, 0.0); n];
    let order = net.bfs_order();

    for _ in 0..max_iter {
        // Backward: subtree[b] is the current flowing through the branch
        // into bus b (oriented parent -> b).
        for s in subtree.iter_mut() {
            *s = Complex64::new(0.0, 0.0);
        }
        for &b in order.iter().rev() {
            if b == 0 {
                continue;
            }
            if v[b].norm() < collapse {
                return Err(Error::Numerical(format!(
                    "voltage collapsed at bus {b} during sweep"
                )));
            }
            let s_inj = x.injection(b - 1);
            // Injected current conj(s/v); a load (negative s) draws current.
            let draw = -(s_inj / v[b]).conj();
            subtree[b] += draw;
            if let Some(p) = net.parent(b) {
                if p != 0 {
                    let add = subtree[b];
                    subtree[p] += add;
                }
            }
        }
        // Forward: propagate voltage drops from the slack.
        let mut max_delta: f64 = 0.0;
        for &b in order.iter() {
            if b == 0 {
                continue;
            }
            let p = net.parent(b).expect("non-slack bus has a parent");
            let new_v = v[p] - net.branch_impedance(b) * subtree[b];
            max_delta = max_delta.max((new_v - v[b]).norm());
            v[b] = new_v;
        }
        if max_delta < tol_v {
            let w = DVector::from_iterator(net.n_load(), (1..n).map(|b| v[b]));
            return Ok(ComplexVoltageState::new(w));
        }
    }
    Err(Error::NonConvergence {
        what: "backward/forward sweep".to_string(),
        iterations: max_iter,
        residual: f64::NAN,
    })
}

/// Affine power flow: `w = V0·1 + M·conj(s) / V0` with `s` the complex
/// injections over load buses.
pub fn linear_pf(m: &DlfMatrix, s: &DVector<Complex64>, v0: f64) -> ComplexVoltageState {
    let conj_s = s.map(|z| z.conj());
    let mut w = m.matrix() * conj_s / Complex64::new(v0, 0.0);
    for entry in w.iter_mut() {
        *entry += Complex64::new(v0, 0.0);
    }
    ComplexVoltageState::new(w)
}

/// Observation function for PMU assimilation: runs a full power flow and
/// extracts (magnitude, angle) at the monitored buses in ascending order,
/// stacked magnitudes first. Deterministic: identical inputs give identical
/// outputs.
pub fn observe_pmu(
    net: &NetworkModel,
    x: &PowerInjectionState,
    monitored: &[usize],
) -> Result<DVector<f64>> {
    for &b in monitored {
        if b == 0 || b >= net.n_buses() {
            return Err(Error::invalid(format!("monitored bus {b} is not a load bus")));
        }
    }
    let w = solve_bfs(net, x, BFS_TOL_V, BFS_MAX_ITER)?;
    let k = monitored.len();
    let mut z = DVector::zeros(2 * k);
    for (j, &b) in monitored.iter().enumerate() {
        let v = w.voltage(b - 1);
        z[j] = v.norm();
        z[k + j] = v.arg();
    }
    Ok(z)
}

/// Injections implied by a voltage profile: branch currents follow from
/// voltage differences, and `s_i = v_i · conj(I_i)` with `I_i` the net
/// current injected at bus i.
pub fn injections_from_voltage(
    net: &NetworkModel,
    w: &ComplexVoltageState,
) -> Result<PowerInjectionState> {
    if w.n_load() != net.n_load() {
        return Err(Error::Dimension("voltage state does not match network".into()));
    }
    let n = net.n_buses();
    let volt = |b: usize| -> Complex64 {
        if b == 0 {
            Complex64::new(net.slack_voltage(), 0.0)
        } else {
            w.voltage(b - 1)
        }
    };
    // Current through the branch into each bus, oriented parent -> bus.
    let mut branch_current = vec![Complex64::new(0.0, 0.0); n];
    for b in 1..n {
        let p = net.parent(b).expect("non-slack bus has a parent");
        branch_current[b] = (volt(p) - volt(b)) / net.branch_impedance(b);
    }
    let mut pq = Vec::with_capacity(net.n_load());
    for b in net.load_buses() {
        let mut net_out = -branch_current[b];
        for &c in net.children(b) {
            net_out += branch_current[c];
        }
        let s = volt(b) * net_out.conj();
        pq.push((s.re, s.im));
    }
    Ok(PowerInjectionState::from_injections(&pq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::dlf_matrix;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn two_bus() -> NetworkModel {
        NetworkModel::from_csv_str(
            "from,to,r_ohm,x_ohm,p_kw,q_kvar\n0,1,0.1,0.05,100,50\n",
            12.66e3,
            1.0e6,
        )
        .unwrap()
    }

    /// Exact two-bus solution of `|v|² − v·V0 = s·conj(z)` (V0 real),
    /// taking the high-voltage root.
    fn two_bus_closed_form(s: Complex64, z: Complex64, v0: f64) -> Complex64 {
        let t = s * z.conj();
        let y = -t.im / v0;
        let disc = v0 * v0 - 4.0 * (y * y - t.re);
        let x = 0.5 * (v0 + disc.sqrt());
        Complex64::new(x, y)
    }

    #[test]
    fn zero_injection_gives_flat_profile() {
        let net = NetworkModel::feeder33();
        let x = PowerInjectionState::zeros(net.n_load());
        let w = solve_bfs(&net, &x, BFS_TOL_V, BFS_MAX_ITER).unwrap();
        for i in 0..net.n_load() {
            assert_eq!(w.voltage(i), Complex64::new(12.66e3, 0.0));
        }
    }

    #[test]
    fn two_bus_matches_closed_form() {
        let net = two_bus();
        let s = Complex64::new(-100.0e3, -50.0e3);
        let x = PowerInjectionState::from_injections(&[(s.re, s.im)]);
        let w = solve_bfs(&net, &x, 1e-9, BFS_MAX_ITER).unwrap();
        let exact = two_bus_closed_form(s, Complex64::new(0.1, 0.05), 12.66e3);
        assert!((w.voltage(0) - exact).norm() < 1e-6, "{} vs {exact}", w.voltage(0));
    }

    #[test]
    fn linear_pf_zero_injection_is_v0() {
        let net = NetworkModel::feeder33();
        let m = dlf_matrix(&net);
        let s = DVector::from_element(net.n_load(), Complex64::new(0.0, 0.0));
        let w = linear_pf(&m, &s, net.slack_voltage());
        for i in 0..net.n_load() {
            assert_eq!(w.voltage(i), Complex64::new(12.66e3, 0.0));
        }
    }

    #[test]
    fn linear_pf_two_bus_hand_value() {
        let net = two_bus();
        let m = dlf_matrix(&net);
        let s = DVector::from_element(1, Complex64::new(-100.0e3, -50.0e3));
        let w = linear_pf(&m, &s, 12.66e3);
        // z·conj(s) = (0.1+0.05j)(−100000+50000j) = −12500 + 0j
        let expected = Complex64::new(12.66e3 - 12500.0 / 12.66e3, 0.0);
        assert!((w.voltage(0) - expected).norm() < 1e-9);
    }

    #[test]
    fn linearization_error_shrinks_with_load_scale() {
        let net = NetworkModel::feeder33();
        let m = dlf_matrix(&net);
        let base = PowerInjectionState::from_loads(&net.base_loads());
        let mut last = f64::INFINITY;
        for scale in [1.0, 0.5, 0.1, 0.01] {
            let x = PowerInjectionState::new(base.as_vector() * scale).unwrap();
            let w_exact = solve_bfs(&net, &x, 1e-9, BFS_MAX_ITER).unwrap();
            let w_lin = linear_pf(&m, &x.injections(), net.slack_voltage());
            let err = (0..net.n_load())
                .map(|i| (w_exact.voltage(i) - w_lin.voltage(i)).norm())
                .fold(0.0f64, f64::max);
            assert!(err < last, "scale {scale}: {err} !< {last}");
            last = err;
        }
    }

    #[test]
    fn observe_pmu_empty_set_and_flat_state() {
        let net = NetworkModel::feeder33();
        let x = PowerInjectionState::zeros(net.n_load());
        let z = observe_pmu(&net, &x, &[]).unwrap();
        assert_eq!(z.len(), 0);
        let z = observe_pmu(&net, &x, &[5, 17]).unwrap();
        assert_eq!(z.len(), 4);
        assert_relative_eq!(z[0], 12.66e3);
        assert_relative_eq!(z[1], 12.66e3);
        assert_eq!(z[2], 0.0);
        assert_eq!(z[3], 0.0);
    }

    #[test]
    fn conversions_fixed_points() {
        let y = PolarVoltageState::new(DVector::from_vec(vec![12.66e3, 0.0])).unwrap();
        let w = polar_to_complex(&y).unwrap();
        assert_eq!(w.voltage(0), Complex64::new(12.66e3, 0.0));

        let y = PolarVoltageState::new(DVector::from_vec(vec![1.0, std::f64::consts::PI]))
            .unwrap();
        let w = polar_to_complex(&y).unwrap();
        assert!((w.voltage(0) - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn conversion_round_trip_random_states() {
        let mut rng = crate::seed::stream(99, "conversion-test", 0);
        for _ in 0..50 {
            let n = 8;
            let mut y = DVector::zeros(2 * n);
            for i in 0..n {
                y[i] = 10e3 + 5e3 * rng.random::<f64>();
                y[n + i] = (rng.random::<f64>() - 0.5) * 2.0;
            }
            let state = PolarVoltageState::new(y.clone()).unwrap();
            let back = complex_to_polar(&polar_to_complex(&state).unwrap()).unwrap();
            for i in 0..2 * n {
                assert_relative_eq!(back.as_vector()[i], y[i], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn nonpositive_magnitude_rejected() {
        let y = PolarVoltageState::new(DVector::from_vec(vec![0.0, 0.0])).unwrap();
        assert!(polar_to_complex(&y).is_err());
        let y = PolarVoltageState::new(DVector::from_vec(vec![-5.0, 0.0])).unwrap();
        assert!(polar_to_complex(&y).is_err());
    }

    #[test]
    fn injection_round_trip_through_power_flow() {
        let net = NetworkModel::feeder33();
        let x = PowerInjectionState::from_loads(&net.base_loads());
        let w = solve_bfs(&net, &x, 1e-9, BFS_MAX_ITER).unwrap();
        let back = injections_from_voltage(&net, &w).unwrap();
        for i in 0..net.n_load() {
            let denom = x.injection(i).norm().max(1.0);
            assert!(
                (back.injection(i) - x.injection(i)).norm() / denom < 1e-6,
                "bus {}: {} vs {}",
                i + 1,
                back.injection(i),
                x.injection(i)
            );
        }
    }

    #[test]
    fn extreme_loading_fails_to_converge() {
        let net = two_bus();
        // Far beyond the maximum transferable power for this branch.
        let x = PowerInjectionState::from_injections(&[(-2.0e9, -1.0e9)]);
        let err = solve_bfs(&net, &x, BFS_TOL_V, 40).unwrap_err();
        assert!(
            matches!(err, Error::NonConvergence { .. } | Error::Numerical(_)),
            "got {err}"
        );
    }
}
