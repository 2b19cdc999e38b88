//! Cascade simulation and labelled dataset generation.
//!
//! A cascade round removes failed lines, splits the network into islands,
//! balances every island (re-dispatching generation or shedding load
//! proportionally), solves DC flow and trips every line whose flow is
//! strictly above its rating. Rounds repeat until nothing trips.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dcflow::{compute_flows_on, find_islands, DcFlowError, Island};
use crate::grid::{apply_profile, proportional_dispatch, Grid, GridState, Profile, ProfileError};

/// A sample is a blackout iff its shed load exceeds this, MW.
pub const BLACKOUT_THRESHOLD_MW: f64 = 1e-6;

pub fn is_blackout(mw: f64) -> bool {
    mw > BLACKOUT_THRESHOLD_MW
}

#[derive(Debug, Clone, PartialEq)]
pub struct IslandDispatch {
    /// Served load per island bus, aligned with `Island::buses`.
    pub load: Vec<f64>,
    /// Dispatched generation per island bus.
    pub generation: Vec<f64>,
    pub shed: f64,
}

/// Balances one island. With enough capacity the load is served in full and
/// generation is scaled (within capacity) to match it; otherwise all
/// generators run flat out and every load is scaled by capacity / load.
pub fn rebalance_island(grid: &Grid, state: &GridState, island: &Island) -> IslandDispatch {
    let load: Vec<f64> = island.buses.iter().map(|&b| state.load[b]).collect();
    let weights: Vec<f64> = island.buses.iter().map(|&b| state.generation[b]).collect();
    let capacity: Vec<f64> = island.buses.iter().map(|&b| grid.buses[b].max_generation).collect();
    let total_load: f64 = load.iter().sum();
    let total_capacity: f64 = capacity.iter().sum();

    if total_capacity >= total_load {
        let generation = proportional_dispatch(&weights, &capacity, total_load);
        IslandDispatch { load, generation, shed: 0.0 }
    } else if total_capacity <= 0.0 {
        IslandDispatch { generation: vec![0.0; load.len()], load: vec![0.0; island.buses.len()], shed: total_load }
    } else {
        let ratio = total_capacity / total_load;
        let served: Vec<f64> = load.iter().map(|l| l * ratio).collect();
        IslandDispatch { load: served, generation: capacity, shed: total_load - total_capacity }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub round: usize,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeResult {
    pub blackout_mw: f64,
    pub shed_per_bus: Vec<f64>,
    /// Initial failures at round 0, then every tripped line by round; line
    /// ids ascending within a round.
    pub failure_trace: Vec<TraceEntry>,
    /// Last round in which a line tripped (0 when only the initial failures
    /// occurred).
    pub rounds: usize,
    /// Line status at the end of the cascade.
    pub final_active: Vec<bool>,
}

impl CascadeResult {
    pub fn failed_lines(&self) -> Vec<usize> {
        let mut lines: Vec<usize> = self.failure_trace.iter().map(|t| t.line).collect();
        lines.sort_unstable();
        lines
    }
}

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("line id {0} does not exist")]
    InvalidLine(usize),
    #[error("state has {got} buses, grid has {expected}")]
    StateSize { expected: usize, got: usize },
    #[error("cascade did not settle within {cap} rounds (trace {trace:?})")]
    IterationCap { cap: usize, trace: Vec<TraceEntry> },
    #[error("power flow failed in round {round}: {source}")]
    Flow {
        round: usize,
        #[source]
        source: DcFlowError,
    },
}

/// Final served load and flows of the network with the given line status.
struct RoundOutcome {
    served: Vec<f64>,
    flows: Vec<f64>,
}

fn settle(grid: &Grid, state: &GridState, active: &[bool], round: usize) -> Result<RoundOutcome, CascadeError> {
    let islands = find_islands(grid, active);
    let mut served = vec![0.0; grid.n_buses()];
    let mut injections = vec![0.0; grid.n_buses()];
    for island in &islands {
        let dispatch = rebalance_island(grid, state, island);
        for (k, &bus) in island.buses.iter().enumerate() {
            served[bus] = dispatch.load[k];
            injections[bus] = dispatch.generation[k] - dispatch.load[k];
        }
    }
    let solution =
        compute_flows_on(grid, active, &islands, &injections).map_err(|source| CascadeError::Flow { round, source })?;
    Ok(RoundOutcome { served, flows: solution.flows })
}

/// Runs the cascade started by `initial_failures`.
pub fn simulate_cascade(grid: &Grid, state: &GridState, initial_failures: &[usize]) -> Result<CascadeResult, CascadeError> {
    let n_lines = grid.n_lines();
    if state.load.len() != grid.n_buses() || state.generation.len() != grid.n_buses() {
        return Err(CascadeError::StateSize { expected: grid.n_buses(), got: state.load.len() });
    }
    let mut active = vec![true; n_lines];
    let mut trace = Vec::new();
    let mut initial: Vec<usize> = initial_failures.to_vec();
    initial.sort_unstable();
    initial.dedup();
    for &line in &initial {
        if line >= n_lines {
            return Err(CascadeError::InvalidLine(line));
        }
        active[line] = false;
        trace.push(TraceEntry { round: 0, line });
    }

    let cap = 2 * n_lines;
    let mut round = 0;
    let mut last_trip_round = 0;
    loop {
        let outcome = settle(grid, state, &active, round)?;
        let tripped: Vec<usize> = grid
            .lines
            .iter()
            .filter(|l| active[l.id] && outcome.flows[l.id].abs() > l.rating)
            .map(|l| l.id)
            .collect();
        if tripped.is_empty() {
            let shed_per_bus: Vec<f64> =
                state.load.iter().zip(&outcome.served).map(|(l, s)| (l - s).max(0.0)).collect();
            let blackout_mw = shed_per_bus.iter().sum();
            return Ok(CascadeResult {
                blackout_mw,
                shed_per_bus,
                failure_trace: trace,
                rounds: last_trip_round,
                final_active: active,
            });
        }
        round += 1;
        if round > cap {
            return Err(CascadeError::IterationCap { cap, trace });
        }
        for line in tripped {
            active[line] = false;
            trace.push(TraceEntry { round, line });
        }
        last_trip_round = round;
    }
}

/// All `size`-subsets of `0..n_lines`, lexicographic.
pub fn contingencies(n_lines: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if size == 0 || size > n_lines {
        return out;
    }
    let mut combo: Vec<usize> = (0..size).collect();
    loop {
        out.push(combo.clone());
        let Some(i) = (0..size).rev().find(|&i| combo[i] < n_lines - size + i) else {
            return out;
        };
        combo[i] += 1;
        for j in i + 1..size {
            combo[j] = combo[j - 1] + 1;
        }
    }
}

/// Binomial coefficient C(n, k).
pub fn n_contingencies(n_lines: u64, size: u64) -> u64 {
    if size > n_lines {
        return 0;
    }
    let k = size.min(n_lines - size);
    (0..k).fold(1u64, |acc, i| acc * (n_lines - i) / (i + 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.70, val: 0.15 }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Deterministic split key of a sample, in [0, 1).
pub fn split_key(seed: u64, index: u64) -> f64 {
    let h = splitmix64(splitmix64(seed) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Assigns splits by ranking samples on [`split_key`]: the lowest
/// `round(train·n)` keys go to train, the next ones up to
/// `round((train+val)·n)` to validation, the rest to test.
pub fn assign_splits(n: usize, seed: u64, fractions: SplitFractions) -> Vec<Split> {
    let mut order: Vec<(f64, usize)> = (0..n).map(|i| (split_key(seed, i as u64), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n_train = (fractions.train * n as f64).round() as usize;
    let n_train_val = (((fractions.train + fractions.val) * n as f64).round() as usize).clamp(n_train, n);
    let mut splits = vec![Split::Test; n];
    for (rank, &(_, i)) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Index into `SampleSet::states`.
    pub profile: usize,
    pub failures: Vec<usize>,
    pub blackout_mw: f64,
    pub split: Split,
    /// Every failed line with its round; empty when loaded from a dataset
    /// file.
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub profile_ids: Vec<i64>,
    pub states: Vec<GridState>,
    pub samples: Vec<Sample>,
}

impl SampleSet {
    pub fn state_of(&self, sample: &Sample) -> &GridState {
        &self.states[sample.profile]
    }

    pub fn indices_in(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].split == split).collect()
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("contingency size must be at least 1")]
    ContingencySize,
    #[error("no profiles given")]
    NoProfiles,
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("scenario {scenario}: {source}")]
    Simulation {
        scenario: usize,
        #[source]
        source: CascadeError,
    },
    #[error("dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Simulates every (profile × contingency) pair. Sample index is
/// `profile_index · n_contingencies + contingency_index`; output order does
/// not depend on the worker count.
pub fn generate_dataset(
    grid: &Grid,
    profiles: &[Profile],
    contingency_size: usize,
    seed: u64,
    fractions: SplitFractions,
) -> Result<SampleSet, DatasetError> {
    if contingency_size == 0 {
        return Err(DatasetError::ContingencySize);
    }
    if profiles.is_empty() {
        return Err(DatasetError::NoProfiles);
    }
    let states = profiles.iter().map(|p| apply_profile(grid, p)).collect::<Result<Vec<_>, _>>()?;
    let combos = contingencies(grid.n_lines(), contingency_size);
    let total = states.len() * combos.len();
    let splits = assign_splits(total, seed, fractions);
    let samples = (0..total)
        .into_par_iter()
        .map(|scenario| {
            let profile = scenario / combos.len();
            let failures = &combos[scenario % combos.len()];
            let result = simulate_cascade(grid, &states[profile], failures)
                .map_err(|source| DatasetError::Simulation { scenario, source })?;
            Ok(Sample {
                profile,
                failures: failures.clone(),
                blackout_mw: result.blackout_mw,
                split: splits[scenario],
                trace: result.failure_trace,
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    Ok(SampleSet { profile_ids: profiles.iter().map(|p| p.hour_id).collect(), states, samples })
}

/// Picks `max(1, round(fraction · n))` distinct profile indices, seeded,
/// returned ascending.
pub fn subsample_profiles(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let count = ((fraction * n as f64).round() as usize).clamp(1, n);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed ^ 0x5EED_7ACE);
    let mut keyed: Vec<(u64, usize)> = (0..n).map(|i| (rng.next_u64(), i)).collect();
    keyed.sort_unstable();
    let mut picked: Vec<usize> = keyed[..count].iter().map(|&(_, i)| i).collect();
    picked.sort_unstable();
    picked
}

pub const DATASET_VERSION: &str = "blackout-dataset v1";

/// Writes the dataset as CSV behind a `# blackout-dataset v1 buses=N
/// lines=M` line. Columns: `profile_id`, one failure flag per line, per-bus
/// load and generation, per-line r and x, `blackout_mw`, `split`.
pub fn write_dataset<W: Write>(grid: &Grid, set: &SampleSet, out: W) -> Result<(), DatasetError> {
    let mut out = std::io::BufWriter::new(out);
    writeln!(out, "# {DATASET_VERSION} buses={} lines={}", grid.n_buses(), grid.n_lines())?;
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec!["profile_id".to_string()];
    header.extend((0..grid.n_lines()).map(|l| format!("fail_{l}")));
    header.extend((0..grid.n_buses()).map(|b| format!("load_{b}")));
    header.extend((0..grid.n_buses()).map(|b| format!("gen_{b}")));
    header.extend((0..grid.n_lines()).map(|l| format!("r_{l}")));
    header.extend((0..grid.n_lines()).map(|l| format!("x_{l}")));
    header.push("blackout_mw".into());
    header.push("split".into());
    writer.write_record(&header).map_err(csv_err)?;
    for sample in &set.samples {
        let state = set.state_of(sample);
        let mut mask = vec!["0"; grid.n_lines()];
        for &f in &sample.failures {
            mask[f] = "1";
        }
        let mut row: Vec<String> = vec![set.profile_ids[sample.profile].to_string()];
        row.extend(mask.iter().map(|s| s.to_string()));
        row.extend(state.load.iter().map(|v| v.to_string()));
        row.extend(state.generation.iter().map(|v| v.to_string()));
        row.extend(grid.lines.iter().map(|l| l.resistance.to_string()));
        row.extend(grid.lines.iter().map(|l| l.reactance.to_string()));
        row.push(sample.blackout_mw.to_string());
        row.push(sample.split.as_str().to_string());
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> DatasetError {
    DatasetError::Format(e.to_string())
}

/// Reads a file written by [`write_dataset`]. Samples with the same
/// `profile_id` share one state.
pub fn read_dataset<R: BufRead>(grid: &Grid, mut input: R) -> Result<SampleSet, DatasetError> {
    let mut first = String::new();
    input.read_line(&mut first)?;
    let expected = format!("# {DATASET_VERSION} buses={} lines={}", grid.n_buses(), grid.n_lines());
    if first.trim_end() != expected {
        return Err(DatasetError::Format(format!("expected `{expected}`, found `{}`", first.trim_end())));
    }
    let (nb, nl) = (grid.n_buses(), grid.n_lines());
    let mut reader = csv::Reader::from_reader(input);
    let width = 1 + nl + 2 * nb + 2 * nl + 2;
    if reader.headers().map_err(csv_err)?.len() != width {
        return Err(DatasetError::Format(format!("expected {width} columns")));
    }
    let mut profile_index: BTreeMap<i64, usize> = BTreeMap::new();
    let mut set = SampleSet { profile_ids: Vec::new(), states: Vec::new(), samples: Vec::new() };
    for (row_no, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let bad = |what: &str| DatasetError::Format(format!("row {}: bad {what}", row_no + 1));
        let num = |i: usize| record[i].parse::<f64>();
        let profile_id: i64 = record[0].parse().map_err(|_| bad("profile_id"))?;
        let failures: Vec<usize> = (0..nl).filter(|&l| &record[1 + l] == "1").collect();
        let load = (0..nb).map(|b| num(1 + nl + b)).collect::<Result<Vec<_>, _>>().map_err(|_| bad("load"))?;
        let generation =
            (0..nb).map(|b| num(1 + nl + nb + b)).collect::<Result<Vec<_>, _>>().map_err(|_| bad("generation"))?;
        let blackout_mw = num(width - 2).map_err(|_| bad("blackout_mw"))?;
        let split = Split::parse(&record[width - 1]).ok_or_else(|| bad("split"))?;
        let profile = *profile_index.entry(profile_id).or_insert_with(|| {
            set.profile_ids.push(profile_id);
            set.states.push(GridState { load, generation });
            set.states.len() - 1
        });
        set.samples.push(Sample { profile, failures, blackout_mw, split, trace: Vec::new() });
    }
    Ok(set)
}

/// Trace CSV: `scenario_id,round,line_id`.
pub fn write_traces<W: Write>(traces: &[(usize, Vec<TraceEntry>)], out: W) -> Result<(), DatasetError> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["scenario_id", "round", "line_id"]).map_err(csv_err)?;
    for (scenario, trace) in traces {
        for t in trace {
            writer
                .write_record([scenario.to_string(), t.round.to_string(), t.line.to_string()])
                .map_err(csv_err)?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Reads a trace CSV into per-scenario traces ordered by scenario id.
pub fn read_traces<R: std::io::Read>(input: R) -> Result<Vec<(usize, Vec<TraceEntry>)>, DatasetError> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers().map_err(csv_err)?;
    if headers.iter().collect::<Vec<_>>() != ["scenario_id", "round", "line_id"] {
        return Err(DatasetError::Format(format!("unexpected trace header {headers:?}")));
    }
    let mut grouped: BTreeMap<usize, Vec<TraceEntry>> = BTreeMap::new();
    for record in reader.deserialize::<(usize, usize, usize)>() {
        let (scenario, round, line) = record.map_err(csv_err)?;
        grouped.entry(scenario).or_default().push(TraceEntry { round, line });
    }
    Ok(grouped.into_iter().collect())
}
