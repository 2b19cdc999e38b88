//! Statistical topology augmentation.
//!
//! Line pairs that fail together across many simulated cascades but sit far
//! apart on the physical network get a shortcut edge between one endpoint
//! of each line. Steps: count per-scenario co-failures, drop pairs that
//! share a bus, weight counts by line-to-line hop distance, keep the top k,
//! and connect the most distant endpoint pair of each kept line pair.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{bfs_distances, Grid};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoFailureTable {
    /// Keyed by `(a, b)` with `a < b`; pairs that never co-fail are absent.
    pub counts: BTreeMap<(usize, usize), u64>,
    pub scenario_count: u64,
}

impl CoFailureTable {
    pub fn get(&self, a: usize, b: usize) -> u64 {
        let key = if a < b { (a, b) } else { (b, a) };
        self.counts.get(&key).copied().unwrap_or(0)
    }
}

/// Counts, for every unordered line pair, the scenarios whose failed-line
/// set contains both lines. Each scenario contributes at most once per pair.
pub fn cofailure_counts<T: AsRef<[usize]>>(traces: &[T]) -> CoFailureTable {
    let mut table = CoFailureTable::default();
    for trace in traces {
        table.scenario_count += 1;
        let lines: Vec<usize> = trace.as_ref().iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        for (i, &a) in lines.iter().enumerate() {
            for &b in &lines[i + 1..] {
                *table.counts.entry((a, b)).or_insert(0) += 1;
            }
        }
    }
    table
}

/// All-pairs hop distances on the physical network.
#[derive(Debug, Clone)]
pub struct BusDistances {
    dist: Vec<Vec<Option<usize>>>,
}

impl BusDistances {
    pub fn new(grid: &Grid) -> Self {
        let adj = grid.adjacency();
        Self { dist: (0..grid.n_buses()).map(|s| bfs_distances(&adj, s)).collect() }
    }

    pub fn between(&self, a: usize, b: usize) -> Option<usize> {
        self.dist[a][b]
    }

    /// Minimum hop count over the four endpoint pairs; 0 when the lines
    /// share a bus, `None` when no endpoint pair is connected.
    pub fn line_distance(&self, grid: &Grid, a: usize, b: usize) -> Option<usize> {
        endpoint_pairs(grid, a, b).filter_map(|(u, v)| self.between(u, v)).min()
    }
}

fn endpoint_pairs(grid: &Grid, a: usize, b: usize) -> impl Iterator<Item = (usize, usize)> {
    let (la, lb) = (&grid.lines[a], &grid.lines[b]);
    let (ea, eb) = ([la.from_bus, la.to_bus], [lb.from_bus, lb.to_bus]);
    ea.into_iter().flat_map(move |u| eb.into_iter().map(move |v| (u, v)))
}

/// Line-to-line hop distance (see [`BusDistances::line_distance`]).
pub fn line_distance(grid: &Grid, a: usize, b: usize) -> Option<usize> {
    let adj = grid.adjacency();
    let la = &grid.lines[a];
    [la.from_bus, la.to_bus]
        .into_iter()
        .flat_map(|s| {
            let d = bfs_distances(&adj, s);
            let lb = &grid.lines[b];
            [d[lb.from_bus], d[lb.to_bus]]
        })
        .flatten()
        .min()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticalEdge {
    /// `from_bus < to_bus`.
    pub from_bus: usize,
    pub to_bus: usize,
    /// Line pair the edge was derived from, `a < b`.
    pub source_pair: (usize, usize),
    pub score: f64,
}

/// Scores every eligible co-failing pair and returns them best first.
///
/// A pair is eligible when its lines share no bus, are connected, and the
/// emitted endpoint pair is at least two hops apart (so it never duplicates
/// a physical line). Ties on score go to the lexicographically smaller line
/// pair; the emitted endpoint pair is the most distant one, ties to the
/// smaller `(bus, bus)`.
pub fn rank_statistical_edges(table: &CoFailureTable, grid: &Grid) -> Vec<StatisticalEdge> {
    let distances = BusDistances::new(grid);
    let mut ranked: Vec<(u64, StatisticalEdge)> = Vec::new();
    for (&(a, b), &count) in &table.counts {
        if a == b || count == 0 {
            continue;
        }
        let Some(hops) = distances.line_distance(grid, a, b) else { continue };
        if hops == 0 {
            continue;
        }
        let (from_bus, to_bus, far) = endpoint_pairs(grid, a, b)
            .filter_map(|(u, v)| distances.between(u, v).map(|d| (u.min(v), u.max(v), d)))
            .max_by(|x, y| x.2.cmp(&y.2).then((y.0, y.1).cmp(&(x.0, x.1))))
            .expect("connected pair has a distance");
        if far < 2 {
            continue;
        }
        let score = count * hops as u64;
        ranked.push((score, StatisticalEdge { from_bus, to_bus, source_pair: (a, b), score: score as f64 }));
    }
    ranked.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.source_pair.cmp(&y.1.source_pair)));
    ranked.into_iter().map(|(_, e)| e).collect()
}

/// Top `k` of [`rank_statistical_edges`]. Fewer than `k` eligible pairs
/// yields all of them and a warning.
pub fn select_statistical_edges(table: &CoFailureTable, grid: &Grid, k: usize) -> Vec<StatisticalEdge> {
    if k == 0 {
        return Vec::new();
    }
    let mut ranked = rank_statistical_edges(table, grid);
    if ranked.len() < k {
        log::warn!("only {} eligible line pairs for {k} statistical edges", ranked.len());
    }
    ranked.truncate(k);
    ranked
}

/// Physical lines plus statistical edges, in the order the GNN sees them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedTopology {
    pub n_buses: usize,
    pub physical: Vec<(usize, usize)>,
    /// Sorted by descending score.
    pub statistical_edges: Vec<StatisticalEdge>,
}

impl AugmentedTopology {
    pub fn physical_only(grid: &Grid) -> Self {
        augment_topology(grid, &[])
    }

    pub fn n_edges(&self) -> usize {
        self.physical.len() + self.statistical_edges.len()
    }

    /// Physical edges first (line order), then statistical edges.
    pub fn edge_index(&self) -> Vec<(usize, usize)> {
        let mut edges = self.physical.clone();
        edges.extend(self.statistical_edges.iter().map(|e| (e.from_bus, e.to_bus)));
        edges
    }
}

pub fn augment_topology(grid: &Grid, edges: &[StatisticalEdge]) -> AugmentedTopology {
    let physical: Vec<(usize, usize)> = grid.lines.iter().map(|l| (l.from_bus, l.to_bus)).collect();
    let occupied: BTreeSet<(usize, usize)> = physical.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
    let mut statistical_edges = Vec::with_capacity(edges.len());
    for e in edges {
        let key = (e.from_bus.min(e.to_bus), e.from_bus.max(e.to_bus));
        if e.from_bus == e.to_bus || occupied.contains(&key) {
            log::warn!("skipping statistical edge {}-{}: duplicates a physical line", e.from_bus, e.to_bus);
            continue;
        }
        statistical_edges.push(e.clone());
    }
    statistical_edges.sort_by(|a, b| b.score.total_cmp(&a.score));
    AugmentedTopology { n_buses: grid.n_buses(), physical, statistical_edges }
}

#[derive(Debug, Error)]
pub enum EdgeFileError {
    #[error("statistical edge file: {0}")]
    Csv(#[from] csv::Error),
    #[error("statistical edge file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct EdgeRow {
    from_bus: usize,
    to_bus: usize,
    line_a: usize,
    line_b: usize,
    score: f64,
}

/// CSV with header `from_bus,to_bus,line_a,line_b,score`.
pub fn write_edges<W: Write>(edges: &[StatisticalEdge], out: W) -> Result<(), EdgeFileError> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    writer.write_record(["from_bus", "to_bus", "line_a", "line_b", "score"])?;
    for e in edges {
        writer.serialize(EdgeRow {
            from_bus: e.from_bus,
            to_bus: e.to_bus,
            line_a: e.source_pair.0,
            line_b: e.source_pair.1,
            score: e.score,
        })?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_edges<R: Read>(input: R) -> Result<Vec<StatisticalEdge>, EdgeFileError> {
    let mut reader = csv::Reader::from_reader(input);
    reader
        .deserialize::<EdgeRow>()
        .map(|row| {
            let r = row?;
            Ok(StatisticalEdge { from_bus: r.from_bus, to_bus: r.to_bus, source_pair: (r.line_a, r.line_b), score: r.score })
        })
        .collect()
}
