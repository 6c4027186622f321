//! Simulated PMU readings, pseudo-measurement assembly, and greedy PMU
//! placement.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::loadmodel::ForecastSet;
use crate::network::NetworkModel;
use crate::powerflow::PolarVoltageState;

/// Angle readings near the slack sit at ~0 rad, where a purely relative
/// noise model degenerates to zero variance; the noise floor keeps WLS
/// weights finite there.
pub const ANGLE_FLOOR_RAD: f64 = 1e-3;

/// Monitored buses and the relative PMU error standard deviation.
///
/// `buses` keeps the order the buses were selected in (greedy order for
/// placements produced by [`greedy_placement`]); measurement vectors always
/// use ascending bus order via [`PmuPlacement::monitored`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmuPlacement {
    pub sigma_pmu: f64,
    pub buses: Vec<usize>,
}

impl PmuPlacement {
    pub fn new(buses: Vec<usize>, sigma_pmu: f64, net: &NetworkModel) -> Result<Self> {
        if sigma_pmu < 0.0 {
            return Err(Error::invalid("sigma_pmu must be nonnegative"));
        }
        let mut seen = vec![false; net.n_buses()];
        for &b in &buses {
            if b == 0 || b >= net.n_buses() {
                return Err(Error::invalid(format!("bus {b} is not a load bus")));
            }
            if seen[b] {
                return Err(Error::invalid(format!("bus {b} listed twice")));
            }
            seen[b] = true;
        }
        Ok(Self { sigma_pmu, buses })
    }

    pub fn len(&self) -> usize {
        self.buses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buses.is_empty()
    }

    /// Monitored buses in ascending order — the order measurement vectors use.
    pub fn monitored(&self) -> Vec<usize> {
        let mut sorted = self.buses.clone();
        sorted.sort_unstable();
        sorted
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let json =
            serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn read_json(path: &Path, net: &NetworkModel) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let raw: PmuPlacement = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        Self::new(raw.buses, raw.sigma_pmu, net)
    }
}

/// PMU readings at one time-step: `2|S|` values (magnitudes then angles,
/// ascending bus order) with the per-entry variances the device reports.
#[derive(Debug, Clone, PartialEq)]
pub struct PmuReadings {
    pub values: DVector<f64>,
    pub variances: DVector<f64>,
}

/// Everything an estimator sees at one time-step.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSnapshot {
    pub pmu: PmuReadings,
    /// Pseudo-measurement vector `[P_f; Q_f]` in injection convention.
    pub pseudo: DVector<f64>,
    pub timestamp_s: f64,
}

impl MeasurementSnapshot {
    pub fn new(pmu: PmuReadings, pseudo: DVector<f64>, timestamp_s: f64) -> Result<Self> {
        if pmu.values.len() != pmu.variances.len() {
            return Err(Error::Dimension("PMU values/variances differ".into()));
        }
        if pmu.values.len() % 2 != 0 || pseudo.len() % 2 != 0 {
            return Err(Error::Dimension("measurement vectors must have even length".into()));
        }
        if pmu.variances.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("negative measurement variance"));
        }
        Ok(Self {
            pmu,
            pseudo,
            timestamp_s,
        })
    }
}

/// Simulates PMU readings from the true polar state.
///
/// Each magnitude reads `a·(1 + sigma·g)` with `g` standard normal,
/// independent across buses and between magnitude and angle. Angles use the
/// same relative model floored at [`ANGLE_FLOOR_RAD`]. Reported variances
/// follow the reading itself: `sigma²·reading²` (floored for angles).
pub fn simulate_pmu<R: Rng>(
    truth: &PolarVoltageState,
    placement: &PmuPlacement,
    rng: &mut R,
) -> PmuReadings {
    let monitored = placement.monitored();
    let k = monitored.len();
    let sigma = placement.sigma_pmu;
    let mut values = DVector::zeros(2 * k);
    let mut variances = DVector::zeros(2 * k);
    for (j, &bus) in monitored.iter().enumerate() {
        let mag = truth.magnitude(bus - 1);
        let ang = truth.angle(bus - 1);
        let g_mag: f64 = StandardNormal.sample(rng);
        let g_ang: f64 = StandardNormal.sample(rng);
        let mag_read = mag * (1.0 + sigma * g_mag);
        let ang_read = ang + sigma * ang.abs().max(ANGLE_FLOOR_RAD) * g_ang;
        values[j] = mag_read;
        values[k + j] = ang_read;
        variances[j] = sigma * sigma * mag_read * mag_read;
        variances[k + j] = sigma * sigma * ang_read.abs().max(ANGLE_FLOOR_RAD).powi(2);
    }
    PmuReadings { values, variances }
}

/// Stacks forecasts into the pseudo-measurement vector `[P_f; Q_f]`,
/// negated into the injection convention (loads consume).
pub fn pseudo_vector(forecasts: &ForecastSet) -> DVector<f64> {
    let n = forecasts.n_load();
    let mut d = DVector::zeros(2 * n);
    for i in 0..n {
        d[i] = -forecasts.p_f[i];
        d[n + i] = -forecasts.q_f[i];
    }
    d
}

/// Greedy PMU placement: starting from the empty set, repeatedly adds the
/// bus whose addition minimizes the evaluator (a theoretical error metric),
/// breaking ties toward the lowest bus index.
///
/// Returns the placement (buses in selection order) together with the
/// evaluator value after each addition, for monotonicity audits.
pub fn greedy_placement<F>(
    net: &NetworkModel,
    k: usize,
    sigma_pmu: f64,
    mut evaluator: F,
) -> Result<(PmuPlacement, Vec<f64>)>
where
    F: FnMut(&[usize]) -> Result<f64>,
{
    if k > net.n_load() {
        return Err(Error::invalid(format!(
            "cannot place {k} PMUs on {} load buses",
            net.n_load()
        )));
    }
    let mut selected: Vec<usize> = Vec::with_capacity(k);
    let mut audit = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for bus in net.load_buses() {
            if selected.contains(&bus) {
                continue;
            }
            let mut candidate = selected.clone();
            candidate.push(bus);
            candidate.sort_unstable();
            let value = evaluator(&candidate)?;
            // Strict comparison with ascending bus iteration keeps the
            // lowest index on ties.
            if best.map_or(true, |(_, v)| value < v) {
                best = Some((bus, value));
            }
        }
        let (bus, value) = best.expect("k <= n_load leaves a candidate");
        selected.push(bus);
        audit.push(value);
    }
    Ok((PmuPlacement::new(selected, sigma_pmu, net)?, audit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::powerflow::PolarVoltageState;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn flat_state(n: usize, v0: f64) -> PolarVoltageState {
        let mut y = DVector::zeros(2 * n);
        for i in 0..n {
            y[i] = v0;
        }
        PolarVoltageState::new(y).unwrap()
    }

    #[test]
    fn zero_sigma_reads_exact_truth() {
        let net = NetworkModel::feeder33();
        let placement = PmuPlacement::new(vec![5, 17, 30], 0.0, &net).unwrap();
        let truth = flat_state(net.n_load(), 12.66e3);
        let mut rng = crate::seed::stream(1, "pmu", 0);
        let readings = simulate_pmu(&truth, &placement, &mut rng);
        assert_eq!(readings.values.len(), 6);
        for j in 0..3 {
            assert_eq!(readings.values[j], 12.66e3);
            assert_eq!(readings.values[3 + j], 0.0);
            assert_eq!(readings.variances[j], 0.0);
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let net = NetworkModel::feeder33();
        let placement = PmuPlacement::new(vec![3, 9], 0.01, &net).unwrap();
        let truth = flat_state(net.n_load(), 12.66e3);
        let a = simulate_pmu(&truth, &placement, &mut crate::seed::stream(9, "pmu", 0));
        let b = simulate_pmu(&truth, &placement, &mut crate::seed::stream(9, "pmu", 0));
        assert_eq!(a, b);
    }

    #[test]
    fn monte_carlo_relative_noise_level() {
        let net = NetworkModel::feeder33();
        let placement = PmuPlacement::new(vec![17], 0.01, &net).unwrap();
        let truth = flat_state(net.n_load(), 12.66e3);
        let mut rng = crate::seed::stream(2, "pmu-mc", 0);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let r = simulate_pmu(&truth, &placement, &mut rng);
            sum += r.values[0];
            sum_sq += r.values[0] * r.values[0];
        }
        let mean = sum / n as f64;
        let std = (sum_sq / n as f64 - mean * mean).sqrt();
        let rel = std / mean;
        assert!((0.0098..=0.0102).contains(&rel), "relative std {rel}");
        // Unbiasedness: the mean error stays within a 3-sigma band.
        let band = 3.0 * 0.01 * 12.66e3 / (n as f64).sqrt();
        assert!((mean - 12.66e3).abs() < band, "bias {}", mean - 12.66e3);
    }

    #[test]
    fn pseudo_vector_signs_and_length() {
        let f = ForecastSet::new(
            vec![100.0e3],
            vec![50.0e3],
            0.3,
            vec![0.9],
            vec![0.9],
            86_400.0,
        )
        .unwrap();
        let d = pseudo_vector(&f);
        assert_eq!(d.len(), 2);
        assert_relative_eq!(d[0], -100.0e3);
        assert_relative_eq!(d[1], -50.0e3);

        let zeros = ForecastSet::new(
            vec![0.0; 32],
            vec![0.0; 32],
            0.3,
            vec![0.0; 32],
            vec![0.0; 32],
            86_400.0,
        )
        .unwrap();
        let d = pseudo_vector(&zeros);
        assert_eq!(d.len(), 64);
        assert!(d.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn greedy_zero_is_empty() {
        let net = NetworkModel::feeder33();
        let (p, audit) = greedy_placement(&net, 0, 0.01, |_| Ok(1.0)).unwrap();
        assert!(p.is_empty());
        assert!(audit.is_empty());
    }

    #[test]
    fn greedy_exhausts_all_buses_in_recorded_order() {
        let net = NetworkModel::feeder33();
        // Evaluator rewards adding the highest-numbered bus first.
        let (p, _) = greedy_placement(&net, net.n_load(), 0.01, |s| {
            Ok(-(s.iter().map(|&b| b * b).sum::<usize>() as f64))
        })
        .unwrap();
        assert_eq!(p.len(), 32);
        assert_eq!(p.buses[0], 32);
        assert_eq!(p.buses[31], 1);
        let mut sorted = p.buses.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (1..=32).collect::<Vec<_>>());
    }

    #[test]
    fn greedy_breaks_ties_toward_lowest_bus() {
        let net = NetworkModel::feeder33();
        let (p, _) = greedy_placement(&net, 3, 0.01, |s| Ok(-(s.len() as f64))).unwrap();
        assert_eq!(p.buses, vec![1, 2, 3]);
    }

    #[test]
    fn greedy_propagates_evaluator_failure() {
        let net = NetworkModel::feeder33();
        let r = greedy_placement(&net, 1, 0.01, |_| {
            Err(Error::Numerical("boom".into()))
        });
        assert!(r.is_err());
    }

    #[test]
    fn placement_rejects_duplicates_and_slack() {
        let net = NetworkModel::feeder33();
        assert!(PmuPlacement::new(vec![4, 4], 0.01, &net).is_err());
        assert!(PmuPlacement::new(vec![0], 0.01, &net).is_err());
        assert!(PmuPlacement::new(vec![33], 0.01, &net).is_err());
    }

    #[test]
    fn placement_json_round_trip() {
        let net = NetworkModel::feeder33();
        let placement = PmuPlacement::new(vec![17, 3, 29], 0.02, &net).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("placement.json");
        placement.write_json(&path).unwrap();
        let back = PmuPlacement::read_json(&path, &net).unwrap();
        assert_eq!(back, placement);
    }
}
