//! Radial distribution network model and the linearized distribution
//! load-flow (DLF) matrix.
//!
//! Bus 0 is the slack/substation bus, modeled as an ideal voltage source of
//! magnitude `V0` and angle zero; it carries no load. The remaining buses
//! are load buses. State vectors throughout the crate cover load buses only,
//! in ascending bus order, so entry `i` corresponds to bus `i + 1`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::units;

/// One feeder branch with its series impedance in ohms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub impedance: Complex64,
}

/// A bus record: index and base load (zero on the slack bus).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub index: usize,
    pub p_load_w: f64,
    pub q_load_w: f64,
}

/// Validated radial feeder. Immutable after construction.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    slack_voltage_v: f64,
    base_power_va: f64,
    /// Parent bus of each bus in the tree rooted at the slack (`None` for bus 0).
    parent: Vec<Option<usize>>,
    /// Impedance of the branch connecting each non-slack bus to its parent.
    branch_z: Vec<Complex64>,
    /// Buses in breadth-first order from the slack; the slack comes first.
    bfs_order: Vec<usize>,
    /// Child buses of each bus in the oriented tree.
    children: Vec<Vec<usize>>,
}

/// Raw CSV row of the feeder format: `from,to,r_ohm,x_ohm,p_kw,q_kvar`,
/// where the load belongs to the `to` bus.
#[derive(Debug, Deserialize)]
struct FeederRow {
    from: usize,
    to: usize,
    r_ohm: f64,
    x_ohm: f64,
    p_kw: f64,
    q_kvar: f64,
}

impl NetworkModel {
    /// Builds and validates a network from branch rows. `loads[i]` is the
    /// (P, Q) load in watts/vars at bus `i`; the slack entry must be zero.
    pub fn from_parts(
        branches: Vec<Branch>,
        loads: Vec<(f64, f64)>,
        slack_voltage_v: f64,
        base_power_va: f64,
    ) -> Result<Self> {
        if slack_voltage_v <= 0.0 {
            return Err(Error::invalid("slack voltage must be positive"));
        }
        if base_power_va <= 0.0 {
            return Err(Error::invalid("base power must be positive"));
        }
        let n = loads.len();
        if n < 2 {
            return Err(Error::invalid("a feeder needs at least one load bus"));
        }
        if branches.len() != n - 1 {
            return Err(Error::NonRadial(format!(
                "{} branches for {} buses; a radial feeder has exactly {}",
                branches.len(),
                n,
                n - 1
            )));
        }
        for b in &branches {
            if b.from >= n || b.to >= n {
                return Err(Error::invalid(format!(
                    "branch {}-{} references a bus outside 0..{}",
                    b.from, b.to, n
                )));
            }
            if b.from == b.to {
                return Err(Error::NonRadial(format!("self-loop at bus {}", b.from)));
            }
            if b.impedance.re < 0.0 {
                return Err(Error::invalid(format!(
                    "branch {}-{} has negative resistance",
                    b.from, b.to
                )));
            }
        }
        if loads[0].0 != 0.0 || loads[0].1 != 0.0 {
            return Err(Error::invalid("the slack bus (0) must carry no load"));
        }

        // Orient the tree away from the slack with a breadth-first pass.
        let mut adjacency: Vec<Vec<(usize, Complex64)>> = vec![Vec::new(); n];
        for b in &branches {
            adjacency[b.from].push((b.to, b.impedance));
            adjacency[b.to].push((b.from, b.impedance));
        }
        let mut parent: Vec<Option<usize>> = vec![None; n];
        let mut branch_z = vec![Complex64::new(0.0, 0.0); n];
        let mut visited = vec![false; n];
        let mut bfs_order = Vec::with_capacity(n);
        let mut queue = std::collections::VecDeque::new();
        visited[0] = true;
        queue.push_back(0usize);
        while let Some(u) = queue.pop_front() {
            bfs_order.push(u);
            for &(v, z) in &adjacency[u] {
                if !visited[v] {
                    visited[v] = true;
                    parent[v] = Some(u);
                    branch_z[v] = z;
                    queue.push_back(v);
                }
            }
        }
        if let Some(bus) = visited.iter().position(|&v| !v) {
            return Err(Error::Disconnected(bus));
        }
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for bus in 1..n {
            children[parent[bus].expect("non-slack bus has a parent")].push(bus);
        }

        let buses = loads
            .iter()
            .enumerate()
            .map(|(index, &(p, q))| Bus {
                index,
                p_load_w: p,
                q_load_w: q,
            })
            .collect();

        Ok(NetworkModel {
            buses,
            branches,
            slack_voltage_v,
            base_power_va,
            parent,
            branch_z,
            bfs_order,
            children,
        })
    }

    /// Parses the documented feeder CSV format. Slack parameters are not part
    /// of the file and come from the caller's configuration.
    pub fn load(path: &Path, slack_voltage_v: f64, base_power_va: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_str(&text, slack_voltage_v, base_power_va)
            .map_err(|e| annotate_path(e, path))
    }

    /// Parses feeder CSV content.
    pub fn from_csv_str(text: &str, slack_voltage_v: f64, base_power_va: f64) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut branches = Vec::new();
        let mut rows: Vec<FeederRow> = Vec::new();
        for (i, record) in reader.deserialize::<FeederRow>().enumerate() {
            // +2: one for the header, one for 1-based line numbering.
            let line = i + 2;
            let row = record.map_err(|e| Error::parse(format!("line {line}"), e.to_string()))?;
            branches.push(Branch {
                from: row.from,
                to: row.to,
                impedance: Complex64::new(row.r_ohm, row.x_ohm),
            });
            rows.push(row);
        }
        if branches.is_empty() {
            return Err(Error::parse("feeder file", "no branch rows"));
        }
        let n = branches
            .iter()
            .map(|b| b.from.max(b.to))
            .max()
            .unwrap_or(0)
            + 1;
        let mut loads = vec![(0.0, 0.0); n];
        for (i, row) in rows.iter().enumerate() {
            if row.to == 0 {
                return Err(Error::parse(
                    format!("line {}", i + 2),
                    "load assigned to the slack bus",
                ));
            }
            loads[row.to].0 += units::kw_to_w(row.p_kw);
            loads[row.to].1 += units::kvar_to_var(row.q_kvar);
        }
        Self::from_parts(branches, loads, slack_voltage_v, base_power_va)
    }

    /// The bundled 33-bus test feeder (12.66 kV, 3715 kW / 2300 kvar total).
    pub fn feeder33() -> Self {
        const FEEDER33: &str = include_str!("../data/feeder33.csv");
        Self::from_csv_str(FEEDER33, 12.66e3, units::DEFAULT_BASE_POWER_VA)
            .expect("bundled feeder data is valid")
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Number of load (non-slack) buses; the dimension of state vectors is
    /// twice this.
    pub fn n_load(&self) -> usize {
        self.buses.len() - 1
    }

    pub fn slack_voltage(&self) -> f64 {
        self.slack_voltage_v
    }

    pub fn base_power(&self) -> f64 {
        self.base_power_va
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    /// Load buses in ascending order (1..n_buses).
    pub fn load_buses(&self) -> impl Iterator<Item = usize> + '_ {
        1..self.n_buses()
    }

    pub fn parent(&self, bus: usize) -> Option<usize> {
        self.parent[bus]
    }

    /// Impedance of the branch between `bus` and its parent. Bus 0 has none.
    pub fn branch_impedance(&self, bus: usize) -> Complex64 {
        self.branch_z[bus]
    }

    /// Buses in breadth-first order from the slack.
    pub fn bfs_order(&self) -> &[usize] {
        &self.bfs_order
    }

    pub fn children(&self, bus: usize) -> &[usize] {
        &self.children[bus]
    }

    /// Base loads of the load buses as (P, Q) in watts/vars, state order.
    pub fn base_loads(&self) -> Vec<(f64, f64)> {
        self.buses[1..]
            .iter()
            .map(|b| (b.p_load_w, b.q_load_w))
            .collect()
    }

    pub fn voltage_pu(&self, volts: f64) -> f64 {
        units::volts_to_pu(volts, self.slack_voltage_v)
    }
}

fn annotate_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}:{}", path.display(), location),
            message,
        },
        other => other,
    }
}

/// Linearized distribution load-flow matrix over load buses, in ohms.
///
/// Entry (i, j) is the summed impedance of the branches shared by the
/// slack-to-bus-(i+1) and slack-to-bus-(j+1) paths; the matrix is symmetric
/// and maps conjugated power injections to voltage deviations (scaled by
/// 1/V0).
#[derive(Debug, Clone, PartialEq)]
pub struct DlfMatrix {
    m: DMatrix<Complex64>,
}

impl DlfMatrix {
    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.m
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    /// Entry addressed by bus indices (1-based load buses).
    pub fn entry_for_buses(&self, bus_i: usize, bus_j: usize) -> Complex64 {
        self.m[(bus_i - 1, bus_j - 1)]
    }
}

/// Builds the DLF matrix from the tree via the branch-path incidence product:
/// with `A[b][j] = 1` when branch `b` lies on the path to bus `j+1` and `Z`
/// the diagonal of branch impedances, `M = Aᵀ Z A`.
pub fn dlf_matrix(net: &NetworkModel) -> DlfMatrix {
    let n = net.n_load();
    // Branch b is identified with the bus it feeds (bus b+1).
    let mut incidence = DMatrix::<Complex64>::zeros(n, n);
    for bus in net.load_buses() {
        let mut cursor = bus;
        while let Some(p) = net.parent(cursor) {
            incidence[(cursor - 1, bus - 1)] = Complex64::new(1.0, 0.0);
            cursor = p;
        }
    }
    let z = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        n,
        net.load_buses().map(|b| net.branch_impedance(b)),
    ));
    let m = incidence.transpose() * z * incidence;
    DlfMatrix { m }
}
