//! Household load traces, bus-level aggregation, and the load evolution
//! model.
//!
//! The load change of a bus between two computation time-steps is modeled as
//! a zero-mean Laplace variable with per-bus scale `b` (variance `2b²`).
//! Scales are fitted from aggregated household traces; a synthetic trace
//! generator stands in for measured data so the crate is self-contained,
//! while a CSV ingestion path accepts real traces in the documented format.
//!
//! Traces generated in one pool share a smooth diurnal usage pattern (houses
//! in one neighborhood see the same day) with independent appliance events
//! on top. Aggregating and rescaling such pools reproduces the two empirical
//! behaviors the estimators rely on: the fitted Laplace scale shrinks as
//! the aggregation level grows and as the time-step shrinks, while the
//! relative forecast error stays roughly level across aggregation sizes.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::NetworkModel;
use crate::seed;

const SECONDS_PER_DAY: f64 = 86_400.0;

/// Instantaneous active power samples at a fixed resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct HouseholdTrace {
    pub watts: Vec<f64>,
    pub resolution_s: f64,
}

impl HouseholdTrace {
    pub fn new(watts: Vec<f64>, resolution_s: f64) -> Result<Self> {
        if resolution_s <= 0.0 {
            return Err(Error::invalid("trace resolution must be positive"));
        }
        if watts.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::invalid("trace samples must be finite and nonnegative"));
        }
        Ok(Self { watts, resolution_s })
    }

    pub fn len(&self) -> usize {
        self.watts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.watts.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.watts.is_empty() {
            0.0
        } else {
            self.watts.iter().sum::<f64>() / self.watts.len() as f64
        }
    }
}

/// Tunables of the synthetic household generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileParams {
    /// Standing load per house, watts.
    pub base_load_w: f64,
    /// Relative spread of the per-house standing load.
    pub base_jitter: f64,
    /// Depth of the shared multiplicative diurnal modulation, in [0, 1).
    pub diurnal_depth: f64,
    /// Appliance switch-on rate per house, events per hour.
    pub event_rate_per_hour: f64,
    /// Mean appliance on-duration, seconds.
    pub event_mean_duration_s: f64,
    /// Appliance power draw range, watts.
    pub event_power_w: (f64, f64),
}

impl Default for ProfileParams {
    fn default() -> Self {
        Self {
            base_load_w: 200.0,
            base_jitter: 0.5,
            diurnal_depth: 0.45,
            event_rate_per_hour: 1.5,
            event_mean_duration_s: 1500.0,
            event_power_w: (300.0, 2800.0),
        }
    }
}

impl ProfileParams {
    fn validate(&self) -> Result<()> {
        if self.base_load_w <= 0.0
            || !(0.0..1.0).contains(&self.base_jitter)
            || !(0.0..1.0).contains(&self.diurnal_depth)
            || self.event_rate_per_hour < 0.0
            || self.event_mean_duration_s <= 0.0
            || self.event_power_w.0 <= 0.0
            || self.event_power_w.1 < self.event_power_w.0
        {
            return Err(Error::invalid("profile parameters out of range"));
        }
        Ok(())
    }
}

/// Zero-mean Laplace sample with the given scale, by inverse CDF.
pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    let u: f64 = rng.random::<f64>() - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Shared diurnal shape of one pool: a few low harmonics of the day with
/// random phases, normalized to [-1, 1].
struct DiurnalShape {
    amplitudes: [f64; 3],
    phases: [f64; 3],
    norm: f64,
}

impl DiurnalShape {
    fn draw<R: Rng>(rng: &mut R) -> Self {
        let mut amplitudes = [0.0; 3];
        let mut phases = [0.0; 3];
        for k in 0..3 {
            amplitudes[k] = 0.3 + rng.random::<f64>();
            phases[k] = rng.random::<f64>() * std::f64::consts::TAU;
        }
        let norm = amplitudes.iter().sum();
        Self { amplitudes, phases, norm }
    }

    fn at(&self, t_s: f64) -> f64 {
        let mut v = 0.0;
        for k in 0..3 {
            let w = std::f64::consts::TAU * (k as f64 + 1.0) / SECONDS_PER_DAY;
            v += self.amplitudes[k] * (w * t_s + self.phases[k]).sin();
        }
        v / self.norm
    }
}

/// Generates a pool of household traces.
///
/// Each trace is a per-house standing load plus appliance on/off events,
/// modulated by the pool's shared diurnal shape. Deterministic given the
/// seed; separate pools (different seeds) are statistically independent.
pub fn synth_traces(
    count: usize,
    duration_s: f64,
    resolution_s: f64,
    params: &ProfileParams,
    master_seed: u64,
) -> Result<Vec<HouseholdTrace>> {
    params.validate()?;
    if resolution_s <= 0.0 || duration_s <= 0.0 {
        return Err(Error::invalid("duration and resolution must be positive"));
    }
    if duration_s + 1e-9 < SECONDS_PER_DAY {
        return Err(Error::invalid(
            "trace duration must cover at least 24 hours",
        ));
    }
    let samples = (duration_s / resolution_s).round() as usize;
    let mut traces = Vec::with_capacity(count);
    let shape = DiurnalShape::draw(&mut seed::stream(master_seed, "pool-diurnal", 0));
    for h in 0..count {
        let mut rng = seed::stream(master_seed, "house", h as u64);
        let base = params.base_load_w
            * (1.0 + params.base_jitter * (2.0 * rng.random::<f64>() - 1.0));
        let response = 0.5 + rng.random::<f64>();
        let rate_per_s = params.event_rate_per_hour / 3600.0;

        let mut watts = Vec::with_capacity(samples);
        // Active appliance events as (end time, power).
        let mut active: Vec<(f64, f64)> = Vec::new();
        let mut next_arrival = if rate_per_s > 0.0 {
            -rng.random::<f64>().ln() / rate_per_s
        } else {
            f64::INFINITY
        };
        for s in 0..samples {
            let t = s as f64 * resolution_s;
            while next_arrival <= t {
                let (lo, hi) = params.event_power_w;
                let power = lo + (hi - lo) * rng.random::<f64>();
                let duration = -rng.random::<f64>().ln() * params.event_mean_duration_s;
                active.push((next_arrival + duration, power));
                next_arrival += -rng.random::<f64>().ln() / rate_per_s;
            }
            active.retain(|&(end, _)| end > t);
            let events: f64 = active.iter().map(|&(_, p)| p).sum();
            let factor = (1.0 + params.diurnal_depth * response * shape.at(t)).max(0.0);
            watts.push((base + events) * factor);
        }
        traces.push(HouseholdTrace { watts, resolution_s });
    }
    Ok(traces)
}

/// Sums `n` randomly picked traces and rescales so the time-mean matches
/// the target. Picks without replacement.
pub fn aggregate_profile<R: Rng>(
    traces: &[HouseholdTrace],
    n: usize,
    target_mean_w: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("aggregation level must be at least 1"));
    }
    if traces.len() < n {
        return Err(Error::invalid(format!(
            "need {n} traces, only {} available",
            traces.len()
        )));
    }
    let len = traces[0].len();
    let res = traces[0].resolution_s;
    if traces.iter().any(|t| t.len() != len || t.resolution_s != res) {
        return Err(Error::Dimension("traces differ in length or resolution".into()));
    }
    // Partial Fisher-Yates for the first n picks.
    let mut indices: Vec<usize> = (0..traces.len()).collect();
    for i in 0..n {
        let j = i + rng.random_range(0..indices.len() - i);
        indices.swap(i, j);
    }
    let mut sum = vec![0.0; len];
    for &idx in &indices[..n] {
        for (acc, &w) in sum.iter_mut().zip(&traces[idx].watts) {
            *acc += w;
        }
    }
    let mean = sum.iter().sum::<f64>() / len as f64;
    if mean <= 0.0 {
        return Err(Error::Numerical("aggregate has nonpositive mean".into()));
    }
    let scale = target_mean_w / mean;
    for v in sum.iter_mut() {
        *v *= scale;
    }
    Ok(sum)
}

/// Result of fitting the Laplace load-change scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceFit {
    /// Scale parameter `b`, watts. Variance of the change is `2b²`.
    pub scale_w: f64,
    /// Set when the profile was constant and the fit is vacuous.
    pub degenerate: bool,
}

/// Fits the zero-mean Laplace scale of profile changes over `dt_s`:
/// the maximum-likelihood estimate is the mean absolute change. The change
/// mean is pinned at zero rather than estimated.
pub fn fit_evolution_model(profile: &[f64], resolution_s: f64, dt_s: f64) -> Result<LaplaceFit> {
    let lag = lag_steps(profile.len(), resolution_s, dt_s)?;
    let count = profile.len() - lag;
    let mut acc = 0.0;
    for t in lag..profile.len() {
        acc += (profile[t] - profile[t - lag]).abs();
    }
    let scale = acc / count as f64;
    Ok(LaplaceFit {
        scale_w: scale,
        degenerate: scale == 0.0,
    })
}

/// Time-mean of the profile; forecasts are constant over the simulated
/// period.
pub fn forecast_from_profile(profile: &[f64]) -> Result<f64> {
    if profile.is_empty() {
        return Err(Error::invalid("profile is empty"));
    }
    Ok(profile.iter().sum::<f64>() / profile.len() as f64)
}

/// Normalized autocorrelation of (profile − mean) at lag `dt_s`, clamped to
/// [-1, 1]. This is the forecast-error correlation between two consecutive
/// computation time-steps when the forecast is the profile mean.
pub fn error_autocorrelation(profile: &[f64], resolution_s: f64, dt_s: f64) -> Result<f64> {
    let lag = if dt_s == 0.0 {
        0
    } else {
        lag_steps(profile.len(), resolution_s, dt_s)?
    };
    let mean = forecast_from_profile(profile)?;
    let denom: f64 = profile.iter().map(|&x| (x - mean) * (x - mean)).sum();
    if denom <= 0.0 {
        return Err(Error::Numerical(
            "zero-variance profile has undefined autocorrelation".into(),
        ));
    }
    let mut num = 0.0;
    for t in lag..profile.len() {
        num += (profile[t] - mean) * (profile[t - lag] - mean);
    }
    Ok((num / denom).clamp(-1.0, 1.0))
}

fn lag_steps(len: usize, resolution_s: f64, dt_s: f64) -> Result<usize> {
    if resolution_s <= 0.0 || dt_s <= 0.0 {
        return Err(Error::invalid("resolution and time-step must be positive"));
    }
    let lag = (dt_s / resolution_s).round() as usize;
    if lag == 0 {
        return Err(Error::invalid("time-step is below the trace resolution"));
    }
    if lag >= len {
        return Err(Error::invalid(format!(
            "profile too short: {len} samples for a lag of {lag}"
        )));
    }
    Ok(lag)
}

/// Houses aggregated at each load bus, proportional to the base active load
/// of the bus relative to a reference bus.
pub fn house_count(net: &NetworkModel, n_ref: usize, ref_bus: usize) -> Result<Vec<usize>> {
    if ref_bus == 0 || ref_bus >= net.n_buses() {
        return Err(Error::invalid(format!("reference bus {ref_bus} is not a load bus")));
    }
    let p_ref = net.buses()[ref_bus].p_load_w;
    if p_ref <= 0.0 {
        return Err(Error::invalid("reference bus has zero base load"));
    }
    Ok(net
        .buses()[1..]
        .iter()
        .map(|b| (((n_ref as f64) * b.p_load_w / p_ref).round() as usize).max(1))
        .collect())
}

/// Per-bus Laplace scales for active/reactive load change over one
/// time-step. Variances are `2b²` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadEvolutionModel {
    pub b_p: Vec<f64>,
    pub b_q: Vec<f64>,
}

impl LoadEvolutionModel {
    pub fn new(b_p: Vec<f64>, b_q: Vec<f64>) -> Result<Self> {
        if b_p.len() != b_q.len() {
            return Err(Error::Dimension("active/reactive scale lists differ".into()));
        }
        if b_p.iter().chain(b_q.iter()).any(|&b| b < 0.0 || !b.is_finite()) {
            return Err(Error::invalid("Laplace scales must be nonnegative"));
        }
        Ok(Self { b_p, b_q })
    }

    pub fn n_load(&self) -> usize {
        self.b_p.len()
    }

    pub fn variance_p(&self, i: usize) -> f64 {
        2.0 * self.b_p[i] * self.b_p[i]
    }

    pub fn variance_q(&self, i: usize) -> f64 {
        2.0 * self.b_q[i] * self.b_q[i]
    }

    /// Apparent-power evolution standard deviation used by the analyzer.
    pub fn sigma_d(&self, i: usize) -> f64 {
        (self.variance_p(i) + self.variance_q(i)).sqrt()
    }
}

/// Per-bus load forecasts with their error statistics.
///
/// `p_f`/`q_f` hold consumption-positive values; the pseudo-measurement
/// vector negates them into the injection convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSet {
    pub p_f: Vec<f64>,
    pub q_f: Vec<f64>,
    /// Nominal relative forecast error standard deviation.
    pub sigma0: f64,
    pub psi_p: Vec<f64>,
    pub psi_q: Vec<f64>,
    /// Forecast refresh interval, seconds.
    pub refresh_interval_s: f64,
}

impl ForecastSet {
    pub fn new(
        p_f: Vec<f64>,
        q_f: Vec<f64>,
        sigma0: f64,
        psi_p: Vec<f64>,
        psi_q: Vec<f64>,
        refresh_interval_s: f64,
    ) -> Result<Self> {
        let n = p_f.len();
        if q_f.len() != n || psi_p.len() != n || psi_q.len() != n {
            return Err(Error::Dimension("forecast vectors differ in length".into()));
        }
        if sigma0 < 0.0 {
            return Err(Error::invalid("sigma0 must be nonnegative"));
        }
        if psi_p.iter().chain(psi_q.iter()).any(|&p| p.abs() > 1.0 + 1e-12) {
            return Err(Error::invalid("autocorrelation outside [-1, 1]"));
        }
        Ok(Self {
            p_f,
            q_f,
            sigma0,
            psi_p,
            psi_q,
            refresh_interval_s,
        })
    }

    pub fn n_load(&self) -> usize {
        self.p_f.len()
    }

    pub fn sigma_fp(&self, i: usize) -> f64 {
        self.sigma0 * self.p_f[i].abs()
    }

    pub fn sigma_fq(&self, i: usize) -> f64 {
        self.sigma0 * self.q_f[i].abs()
    }

    /// Apparent-power forecast magnitude `|P_f + jQ_f|`.
    pub fn apparent(&self, i: usize) -> f64 {
        self.p_f[i].hypot(self.q_f[i])
    }

    /// Apparent-power forecast error standard deviation `sigma0·|S_f|`.
    pub fn sigma_f(&self, i: usize) -> f64 {
        self.sigma0 * self.apparent(i)
    }
}

/// One bus entry of the fitted-model JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedBusModel {
    pub bus: usize,
    pub b_p: f64,
    pub b_q: f64,
    pub psi_p: f64,
    pub psi_q: f64,
    pub p_f: f64,
    pub q_f: f64,
}

/// Writes the fitted-model JSON (`{"buses": [...]}`).
pub fn write_fitted_model(path: &Path, entries: &[FittedBusModel]) -> Result<()> {
    #[derive(Serialize)]
    struct File<'a> {
        buses: &'a [FittedBusModel],
    }
    let json = serde_json::to_string_pretty(&File { buses: entries })
        .map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Reads trace CSV: header `timestamp_s,h0,h1,...`, one column per house,
/// rows at a fixed resolution.
pub fn read_traces_csv(path: &Path) -> Result<Vec<HouseholdTrace>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?
        .clone();
    let houses = headers.len().saturating_sub(1);
    if houses == 0 {
        return Err(Error::parse(
            path.display().to_string(),
            "expected timestamp_s plus at least one house column",
        ));
    }
    let mut timestamps: Vec<f64> = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); houses];
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record
            .map_err(|e| Error::parse(format!("{}:line {line}", path.display()), e.to_string()))?;
        let mut fields = record.iter();
        let ts: f64 = fields
            .next()
            .ok_or_else(|| Error::parse(format!("line {line}"), "missing timestamp"))?
            .parse()
            .map_err(|_| Error::parse(format!("line {line}"), "bad timestamp"))?;
        timestamps.push(ts);
        for (h, field) in fields.enumerate() {
            let w: f64 = field
                .parse()
                .map_err(|_| Error::parse(format!("line {line}"), format!("bad value '{field}'")))?;
            columns[h].push(w);
        }
    }
    if timestamps.len() < 2 {
        return Err(Error::parse(path.display().to_string(), "need at least two rows"));
    }
    let resolution = timestamps[1] - timestamps[0];
    for pair in timestamps.windows(2) {
        if ((pair[1] - pair[0]) - resolution).abs() > 1e-6 * resolution.max(1.0) {
            return Err(Error::parse(
                path.display().to_string(),
                "timestamps are not uniformly spaced",
            ));
        }
    }
    columns
        .into_iter()
        .map(|watts| HouseholdTrace::new(watts, resolution))
        .collect()
}

/// Writes traces in the documented CSV format.
pub fn write_traces_csv(path: &Path, traces: &[HouseholdTrace]) -> Result<()> {
    if traces.is_empty() {
        return Err(Error::invalid("no traces to write"));
    }
    let len = traces[0].len();
    let res = traces[0].resolution_s;
    if traces.iter().any(|t| t.len() != len || t.resolution_s != res) {
        return Err(Error::Dimension("traces differ in length or resolution".into()));
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "timestamp_s")?;
    for h in 0..traces.len() {
        write!(out, ",h{h}")?;
    }
    writeln!(out)?;
    for s in 0..len {
        write!(out, "{}", s as f64 * res)?;
        for t in traces {
            write!(out, ",{:.6}", t.watts[s])?;
        }
        writeln!(out)?;
    }
    Ok(())
}
