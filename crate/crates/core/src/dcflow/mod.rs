//! DC power flow on islanded networks.
//!
//! For each island the reduced susceptance system `B'θ = P` is solved with
//! the island's lowest bus as angle reference; line flows follow from
//! `base_mva · (θ_from − θ_to) / x`.

mod sparse;

use thiserror::Error;

use crate::grid::{balance_tolerance, Grid};
use sparse::SymmetricMatrix;

/// Residual bound on `B'θ = P`, per unit.
pub const SOLVER_TOLERANCE_PU: f64 = 1e-10;

/// Connected component of the active network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Island {
    /// Sorted ascending.
    pub buses: Vec<usize>,
    /// Sorted ascending; both endpoints are in `buses`.
    pub lines: Vec<usize>,
    /// Angle reference, the lowest bus id of the island.
    pub slack_bus: usize,
}

/// Angles and flows for one island, aligned with `Island::buses` and
/// `Island::lines`.
#[derive(Debug, Clone, PartialEq)]
pub struct IslandFlows {
    pub angles: Vec<f64>,
    pub flows: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolution {
    /// Radians per bus, zero at every island's slack.
    pub angles: Vec<f64>,
    /// MW per line in from→to direction; zero for inactive lines.
    pub flows: Vec<f64>,
    pub active: Vec<bool>,
    pub island_of: Vec<usize>,
}

#[derive(Debug, Error, PartialEq)]
pub enum DcFlowError {
    #[error("island with slack {slack}: injections sum to {mismatch} MW")]
    Imbalanced { slack: usize, mismatch: f64 },
    #[error("island with slack {slack}: singular susceptance matrix at bus {bus}")]
    Singular { slack: usize, bus: usize },
    #[error("island with slack {slack}: residual {residual:e} pu above tolerance")]
    Residual { slack: usize, residual: f64 },
    #[error("injection vector has {got} entries for {expected} buses")]
    Length { expected: usize, got: usize },
    #[error("island {index}: {source}")]
    InIsland {
        index: usize,
        #[source]
        source: Box<DcFlowError>,
    },
}

/// Connected components of the graph restricted to `active` lines, ordered
/// by slack bus. Isolated buses are singleton islands.
pub fn find_islands(grid: &Grid, active: &[bool]) -> Vec<Island> {
    let n = grid.n_buses();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for line in grid.lines.iter().filter(|l| active[l.id]) {
        adj[line.from_bus].push((line.to_bus, line.id));
        adj[line.to_bus].push((line.from_bus, line.id));
    }
    let mut label = vec![usize::MAX; n];
    let mut islands: Vec<Island> = Vec::new();
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        let index = islands.len();
        let mut buses = vec![start];
        label[start] = index;
        let mut head = 0;
        while head < buses.len() {
            let u = buses[head];
            head += 1;
            for &(v, _) in &adj[u] {
                if label[v] == usize::MAX {
                    label[v] = index;
                    buses.push(v);
                }
            }
        }
        buses.sort_unstable();
        islands.push(Island { slack_bus: start, buses, lines: Vec::new() });
    }
    for line in grid.lines.iter().filter(|l| active[l.id]) {
        islands[label[line.from_bus]].lines.push(line.id);
    }
    islands
}

/// Solves one island. `injections` is MW per bus over the whole grid; only
/// the island's entries are read and they must sum to zero.
pub fn solve_dc(grid: &Grid, island: &Island, injections: &[f64]) -> Result<IslandFlows, DcFlowError> {
    let slack = island.slack_bus;
    if injections.len() != grid.n_buses() {
        return Err(DcFlowError::Length { expected: grid.n_buses(), got: injections.len() });
    }
    let mismatch: f64 = island.buses.iter().map(|&b| injections[b]).sum();
    let supply: f64 = island.buses.iter().map(|&b| injections[b].max(0.0)).sum();
    if mismatch.abs() > balance_tolerance(supply) {
        return Err(DcFlowError::Imbalanced { slack, mismatch });
    }

    let mut angles = vec![0.0; island.buses.len()];
    if island.buses.len() > 1 {
        // local index 0 is the slack (buses are sorted, slack is the minimum)
        let local = |bus: usize| island.buses.binary_search(&bus).expect("line endpoint inside island");
        let dim = island.buses.len() - 1;
        let mut b = SymmetricMatrix::zeros(dim);
        for &id in &island.lines {
            let line = &grid.lines[id];
            let y = 1.0 / line.reactance;
            let (i, j) = (local(line.from_bus), local(line.to_bus));
            if i > 0 {
                b.add(i - 1, i - 1, y);
            }
            if j > 0 {
                b.add(j - 1, j - 1, y);
            }
            if i > 0 && j > 0 {
                b.add(i - 1, j - 1, -y);
            }
        }
        let rhs: Vec<f64> = island.buses[1..].iter().map(|&bus| injections[bus] / grid.base_mva).collect();
        let factor = b
            .factor()
            .map_err(|p| DcFlowError::Singular { slack, bus: island.buses[p.index + 1] })?;
        let mut theta = factor.solve(&rhs);
        let mut residual = max_residual(&b, &theta, &rhs);
        if residual > SOLVER_TOLERANCE_PU {
            // one step of iterative refinement
            let r: Vec<f64> = rhs.iter().zip(b.mul_vec(&theta)).map(|(p, bt)| p - bt).collect();
            for (t, d) in theta.iter_mut().zip(factor.solve(&r)) {
                *t += d;
            }
            residual = max_residual(&b, &theta, &rhs);
        }
        if residual > SOLVER_TOLERANCE_PU {
            return Err(DcFlowError::Residual { slack, residual });
        }
        angles[1..].copy_from_slice(&theta);
    }

    let angle_of = |bus: usize| angles[island.buses.binary_search(&bus).unwrap()];
    let flows = island
        .lines
        .iter()
        .map(|&id| {
            let line = &grid.lines[id];
            grid.base_mva * (angle_of(line.from_bus) - angle_of(line.to_bus)) / line.reactance
        })
        .collect();
    Ok(IslandFlows { angles, flows })
}

fn max_residual(b: &SymmetricMatrix, theta: &[f64], rhs: &[f64]) -> f64 {
    b.mul_vec(theta).iter().zip(rhs).map(|(bt, p)| (bt - p).abs()).fold(0.0, f64::max)
}

/// Solves every island of the active network and assembles the per-bus and
/// per-line results.
pub fn compute_flows(grid: &Grid, active: &[bool], injections: &[f64]) -> Result<FlowSolution, DcFlowError> {
    let islands = find_islands(grid, active);
    compute_flows_on(grid, active, &islands, injections)
}

/// As [`compute_flows`] with islands already computed by [`find_islands`].
pub fn compute_flows_on(
    grid: &Grid,
    active: &[bool],
    islands: &[Island],
    injections: &[f64],
) -> Result<FlowSolution, DcFlowError> {
    let mut solution = FlowSolution {
        angles: vec![0.0; grid.n_buses()],
        flows: vec![0.0; grid.n_lines()],
        active: active.to_vec(),
        island_of: vec![0; grid.n_buses()],
    };
    for (index, island) in islands.iter().enumerate() {
        let part = solve_dc(grid, island, injections)
            .map_err(|e| DcFlowError::InIsland { index, source: Box::new(e) })?;
        for (&bus, &theta) in island.buses.iter().zip(&part.angles) {
            solution.angles[bus] = theta;
            solution.island_of[bus] = index;
        }
        for (&line, &flow) in island.lines.iter().zip(&part.flows) {
            solution.flows[line] = flow;
        }
    }
    Ok(solution)
}

/// Largest per-bus violation of injection = net outgoing flow, MW.
pub fn max_balance_violation(grid: &Grid, solution: &FlowSolution, injections: &[f64]) -> f64 {
    let mut net = injections.to_vec();
    for line in grid.lines.iter().filter(|l| solution.active[l.id]) {
        let f = solution.flows[line.id];
        net[line.from_bus] -= f;
        net[line.to_bus] += f;
    }
    net.iter().map(|v| v.abs()).fold(0.0, f64::max)
}
