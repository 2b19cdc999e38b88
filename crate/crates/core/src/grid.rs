//! Static network description, hourly operating points and the text formats
//! they are read from.
//!
//! Case file (line oriented, `#` starts a comment):
//!
//! ```text
//! BASE 100
//! BUS 0 150.0
//! LINE 0 0 1 0.01 0.1 80
//! ```
//!
//! Profile file: CSV with header `hour,bus_id,load_mw,gen_mw`, one row per
//! (hour, bus).

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    /// Aggregated generation capacity at the bus, MW.
    pub max_generation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    /// Per-unit series resistance. Only used as a model feature.
    pub resistance: f64,
    /// Per-unit series reactance.
    pub reactance: f64,
    /// Thermal rating, MW.
    pub rating: f64,
}

impl Line {
    pub fn endpoints(&self) -> (usize, usize) {
        (self.from_bus, self.to_bus)
    }

    pub fn touches(&self, bus: usize) -> bool {
        self.from_bus == bus || self.to_bus == bus
    }
}

/// Static power network. Fields are public so that invalid grids can be
/// assembled and inspected with [`validate`]; [`parse_case`] only returns
/// grids without invariant violations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
}

impl Grid {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn total_capacity(&self) -> f64 {
        self.buses.iter().map(|b| b.max_generation).sum()
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.buses.iter().map(|b| b.max_generation).collect()
    }

    /// Per-bus incidence list of `(neighbour, line id)`.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.n_buses()];
        for line in &self.lines {
            adj[line.from_bus].push((line.to_bus, line.id));
            adj[line.to_bus].push((line.from_bus, line.id));
        }
        adj
    }

    /// Hop distances from `source` over all physical lines. Unreachable
    /// buses are `None`.
    pub fn hop_distances(&self, source: usize) -> Vec<Option<usize>> {
        bfs_distances(&self.adjacency(), source)
    }

    /// Renders the grid in the case-file format understood by [`parse_case`].
    pub fn to_case_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("BASE {}\n", self.base_mva));
        for bus in &self.buses {
            out.push_str(&format!("BUS {} {}\n", bus.id, bus.max_generation));
        }
        for l in &self.lines {
            out.push_str(&format!(
                "LINE {} {} {} {} {} {}\n",
                l.id, l.from_bus, l.to_bus, l.resistance, l.reactance, l.rating
            ));
        }
        out
    }
}

pub(crate) fn bfs_distances(adj: &[Vec<(usize, usize)>], source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    let mut queue = VecDeque::new();
    dist[source] = Some(0);
    queue.push_back(source);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap();
        for &(v, _) in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostic {
    NonPositiveBase(f64),
    BusIdOutOfOrder { position: usize, id: usize },
    LineIdOutOfOrder { position: usize, id: usize },
    NegativeCapacity { bus: usize, value: f64 },
    DanglingBus { line: usize, bus: usize },
    SelfLoop { line: usize, bus: usize },
    NegativeResistance { line: usize, value: f64 },
    NonPositiveReactance { line: usize, value: f64 },
    NonPositiveRating { line: usize, value: f64 },
    /// Component sizes, largest first.
    Disconnected { component_sizes: Vec<usize> },
}

impl Diagnostic {
    pub fn is_connectivity(&self) -> bool {
        matches!(self, Diagnostic::Disconnected { .. })
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::NonPositiveBase(v) => write!(f, "non-positive base MVA {v}"),
            Diagnostic::BusIdOutOfOrder { position, id } => {
                write!(f, "bus at position {position} has id {id}; ids must be contiguous from 0")
            }
            Diagnostic::LineIdOutOfOrder { position, id } => {
                write!(f, "line at position {position} has id {id}; ids must be contiguous from 0")
            }
            Diagnostic::NegativeCapacity { bus, value } => {
                write!(f, "bus {bus}: negative generation capacity {value}")
            }
            Diagnostic::DanglingBus { line, bus } => {
                write!(f, "line {line}: references undeclared bus {bus}")
            }
            Diagnostic::SelfLoop { line, bus } => write!(f, "line {line}: self-loop at bus {bus}"),
            Diagnostic::NegativeResistance { line, value } => {
                write!(f, "line {line}: negative resistance {value}")
            }
            Diagnostic::NonPositiveReactance { line, value } => {
                write!(f, "line {line}: non-positive reactance {value}")
            }
            Diagnostic::NonPositiveRating { line, value } => {
                write!(f, "line {line}: non-positive rating {value}")
            }
            Diagnostic::Disconnected { component_sizes } => {
                write!(f, "disconnected: component sizes {component_sizes:?}")
            }
        }
    }
}

/// Checks every grid invariant plus connectivity. Returns one diagnostic per
/// violation; an empty list means the grid is usable.
pub fn validate(grid: &Grid) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if !(grid.base_mva > 0.0) {
        out.push(Diagnostic::NonPositiveBase(grid.base_mva));
    }
    for (position, bus) in grid.buses.iter().enumerate() {
        if bus.id != position {
            out.push(Diagnostic::BusIdOutOfOrder { position, id: bus.id });
        }
        if !(bus.max_generation >= 0.0) {
            out.push(Diagnostic::NegativeCapacity { bus: bus.id, value: bus.max_generation });
        }
    }
    let n = grid.n_buses();
    let mut endpoints_ok = true;
    for (position, line) in grid.lines.iter().enumerate() {
        if line.id != position {
            out.push(Diagnostic::LineIdOutOfOrder { position, id: line.id });
        }
        for bus in [line.from_bus, line.to_bus] {
            if bus >= n {
                endpoints_ok = false;
                out.push(Diagnostic::DanglingBus { line: line.id, bus });
            }
        }
        if line.from_bus == line.to_bus {
            out.push(Diagnostic::SelfLoop { line: line.id, bus: line.from_bus });
        }
        if !(line.resistance >= 0.0) {
            out.push(Diagnostic::NegativeResistance { line: line.id, value: line.resistance });
        }
        if !(line.reactance > 0.0) {
            out.push(Diagnostic::NonPositiveReactance { line: line.id, value: line.reactance });
        }
        if !(line.rating > 0.0) {
            out.push(Diagnostic::NonPositiveRating { line: line.id, value: line.rating });
        }
    }
    if endpoints_ok && n > 0 {
        let adj = grid.adjacency();
        let mut seen = vec![false; n];
        let mut sizes = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let dist = bfs_distances(&adj, start);
            let mut size = 0;
            for (b, d) in dist.iter().enumerate() {
                if d.is_some() {
                    seen[b] = true;
                    size += 1;
                }
            }
            sizes.push(size);
        }
        if sizes.len() > 1 {
            sizes.sort_unstable_by(|a, b| b.cmp(a));
            out.push(Diagnostic::Disconnected { component_sizes: sizes });
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid grid: {}", join_diagnostics(.0))]
    Validation(Vec<Diagnostic>),
}

fn join_diagnostics(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ")
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, what: &str, line: usize) -> Result<T, GridError> {
    let tok = tok.ok_or_else(|| GridError::Parse { line, message: format!("missing {what}") })?;
    tok.parse().map_err(|_| GridError::Parse { line, message: format!("bad {what} `{tok}`") })
}

/// Parses a case file. Connectivity is not required here (see [`validate`]),
/// every other grid invariant is.
pub fn parse_case(text: &str) -> Result<Grid, GridError> {
    let mut base = None;
    let mut buses = Vec::new();
    let mut lines = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut toks = content.split_whitespace();
        let keyword = toks.next().unwrap();
        match keyword.to_ascii_uppercase().as_str() {
            "BASE" => {
                if base.is_some() {
                    return Err(GridError::Parse { line: lineno, message: "duplicate BASE".into() });
                }
                base = Some(parse_field::<f64>(toks.next(), "base MVA", lineno)?);
            }
            "BUS" => buses.push(Bus {
                id: parse_field(toks.next(), "bus id", lineno)?,
                max_generation: parse_field(toks.next(), "max generation", lineno)?,
            }),
            "LINE" => lines.push(Line {
                id: parse_field(toks.next(), "line id", lineno)?,
                from_bus: parse_field(toks.next(), "from bus", lineno)?,
                to_bus: parse_field(toks.next(), "to bus", lineno)?,
                resistance: parse_field(toks.next(), "resistance", lineno)?,
                reactance: parse_field(toks.next(), "reactance", lineno)?,
                rating: parse_field(toks.next(), "rating", lineno)?,
            }),
            other => {
                return Err(GridError::Parse { line: lineno, message: format!("unknown record `{other}`") })
            }
        }
        if let Some(extra) = toks.next() {
            return Err(GridError::Parse { line: lineno, message: format!("unexpected token `{extra}`") });
        }
    }
    let base_mva = base.ok_or(GridError::Parse { line: 0, message: "missing BASE record".into() })?;
    let grid = Grid { base_mva, buses, lines };
    let problems: Vec<_> = validate(&grid).into_iter().filter(|d| !d.is_connectivity()).collect();
    if problems.is_empty() {
        Ok(grid)
    } else {
        Err(GridError::Validation(problems))
    }
}

/// |Σgen − Σload| allowed before a state counts as imbalanced.
pub fn balance_tolerance(total_load: f64) -> f64 {
    (1e-9 * total_load.abs()).max(1e-6)
}

/// One hour of load and generation, MW per bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub hour_id: i64,
    pub load: Vec<f64>,
    pub generation: Vec<f64>,
}

/// Load and dispatched generation per bus. Always paired with the [`Grid`]
/// it was built against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    pub load: Vec<f64>,
    pub generation: Vec<f64>,
}

impl GridState {
    pub fn total_load(&self) -> f64 {
        self.load.iter().sum()
    }

    pub fn total_generation(&self) -> f64 {
        self.generation.iter().sum()
    }

    pub fn injections(&self) -> Vec<f64> {
        self.generation.iter().zip(&self.load).map(|(g, l)| g - l).collect()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("profile {hour}: expected {expected} buses, got load {load} / generation {generation}")]
    LengthMismatch { hour: i64, expected: usize, load: usize, generation: usize },
    #[error("profile {hour}: bus {bus} has invalid load {value}")]
    BadLoad { hour: i64, bus: usize, value: f64 },
    #[error("profile {hour}: bus {bus} generation {value} outside [0, {capacity}]")]
    BadGeneration { hour: i64, bus: usize, value: f64, capacity: f64 },
    #[error("profile {hour}: load {load} MW exceeds generation capacity {capacity} MW")]
    Infeasible { hour: i64, load: f64, capacity: f64 },
    #[error("profile csv: {0}")]
    Csv(String),
}

/// Scales `weights` to sum to `target`, clipping at `capacity` and
/// redistributing the remainder over unclipped buses. Buses whose weight is
/// zero only pick up load once every weighted bus is at capacity, and then in
/// proportion to their capacity. Requires `target <= Σcapacity`.
pub(crate) fn proportional_dispatch(weights: &[f64], capacity: &[f64], target: f64) -> Vec<f64> {
    let n = weights.len();
    let mut out = vec![0.0; n];
    if target <= 0.0 {
        return out;
    }
    let mut clipped = vec![false; n];
    loop {
        let fixed: f64 = (0..n).filter(|&i| clipped[i]).map(|i| capacity[i]).sum();
        let remaining = target - fixed;
        let free = |i: &usize| !clipped[*i] && capacity[*i] > 0.0;
        let mut wsum: f64 = (0..n).filter(free).map(|i| weights[i]).sum();
        let use_capacity = wsum <= 0.0;
        if use_capacity {
            wsum = (0..n).filter(free).map(|i| capacity[i]).sum();
        }
        if wsum <= 0.0 {
            for i in 0..n {
                out[i] = if clipped[i] { capacity[i] } else { 0.0 };
            }
            return out;
        }
        let factor = remaining / wsum;
        let mut violated = false;
        for i in 0..n {
            if clipped[i] {
                out[i] = capacity[i];
            } else if capacity[i] > 0.0 {
                let w = if use_capacity { capacity[i] } else { weights[i] };
                out[i] = w * factor;
                if out[i] > capacity[i] {
                    clipped[i] = true;
                    violated = true;
                }
            } else {
                out[i] = 0.0;
            }
        }
        if !violated {
            return out;
        }
    }
}

/// Builds the operating state for one profile. Imbalanced generation is
/// rescaled uniformly to total load (clipped to capacity).
pub fn apply_profile(grid: &Grid, profile: &Profile) -> Result<GridState, ProfileError> {
    let n = grid.n_buses();
    let hour = profile.hour_id;
    if profile.load.len() != n || profile.generation.len() != n {
        return Err(ProfileError::LengthMismatch {
            hour,
            expected: n,
            load: profile.load.len(),
            generation: profile.generation.len(),
        });
    }
    for (bus, &value) in profile.load.iter().enumerate() {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(ProfileError::BadLoad { hour, bus, value });
        }
    }
    for (bus, &value) in profile.generation.iter().enumerate() {
        let capacity = grid.buses[bus].max_generation;
        if !(value >= 0.0 && value <= capacity) {
            return Err(ProfileError::BadGeneration { hour, bus, value, capacity });
        }
    }
    let load: f64 = profile.load.iter().sum();
    let generation: f64 = profile.generation.iter().sum();
    let tol = balance_tolerance(load);
    if (generation - load).abs() <= tol {
        return Ok(GridState { load: profile.load.clone(), generation: profile.generation.clone() });
    }
    let capacity = grid.total_capacity();
    if load > capacity + tol {
        return Err(ProfileError::Infeasible { hour, load, capacity });
    }
    let dispatched = proportional_dispatch(&profile.generation, &grid.capacities(), load.min(capacity));
    Ok(GridState { load: profile.load.clone(), generation: dispatched })
}

#[derive(Debug, Deserialize, Serialize)]
struct ProfileRow {
    hour: i64,
    bus_id: usize,
    load_mw: f64,
    gen_mw: f64,
}

/// Reads a profile CSV. Every hour must list each bus exactly once; the
/// result is ordered by hour.
pub fn parse_profiles(text: &str, n_buses: usize) -> Result<Vec<Profile>, ProfileError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| ProfileError::Csv(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["hour", "bus_id", "load_mw", "gen_mw"] {
        return Err(ProfileError::Csv(format!("unexpected header {:?}", headers)));
    }
    let mut hours: BTreeMap<i64, (Vec<Option<f64>>, Vec<Option<f64>>)> = BTreeMap::new();
    for (i, row) in reader.deserialize::<ProfileRow>().enumerate() {
        let row = row.map_err(|e| ProfileError::Csv(format!("row {}: {e}", i + 2)))?;
        if row.bus_id >= n_buses {
            return Err(ProfileError::Csv(format!("row {}: unknown bus {}", i + 2, row.bus_id)));
        }
        let entry = hours.entry(row.hour).or_insert_with(|| (vec![None; n_buses], vec![None; n_buses]));
        if entry.0[row.bus_id].is_some() {
            return Err(ProfileError::Csv(format!("row {}: duplicate bus {} in hour {}", i + 2, row.bus_id, row.hour)));
        }
        entry.0[row.bus_id] = Some(row.load_mw);
        entry.1[row.bus_id] = Some(row.gen_mw);
    }
    hours
        .into_iter()
        .map(|(hour_id, (load, generation))| {
            let load: Option<Vec<f64>> = load.into_iter().collect();
            let generation: Option<Vec<f64>> = generation.into_iter().collect();
            match (load, generation) {
                (Some(load), Some(generation)) => Ok(Profile { hour_id, load, generation }),
                _ => Err(ProfileError::Csv(format!("hour {hour_id} does not cover every bus"))),
            }
        })
        .collect()
}

pub fn write_profiles(profiles: &[Profile]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for p in profiles {
        for bus in 0..p.load.len() {
            writer
                .serialize(ProfileRow { hour: p.hour_id, bus_id: bus, load_mw: p.load[bus], gen_mw: p.generation[bus] })
                .expect("in-memory csv write");
        }
    }
    if profiles.is_empty() {
        return "hour,bus_id,load_mw,gen_mw\n".to_string();
    }
    String::from_utf8(writer.into_inner().expect("flush")).expect("utf8")
}
