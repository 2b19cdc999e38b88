//! Reference implementations and fixtures shared by the integration tests.
//! The oracles only use the plain data types of the crate; [`small_study`]
//! is the one fixture built with the trainers.
#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};

use blackout::cascade::{generate_dataset, SampleSet, Split, SplitFractions};
use blackout::gbt::{flat_samples, positive_mean_mw, train_gbt, BoostedForest, GbtParams, TreeNode};
use blackout::gnn::{train_gnn, Architecture, Population, TrainConfig};
use blackout::grid::{parse_case, parse_profiles, Bus, Grid, GridState, Line};
use blackout::influence::AugmentedTopology;
use blackout::pipeline::Regressor;
use rand::Rng;

/// Random connected grid: a random spanning tree plus `extra` random lines
/// (parallel lines allowed). Bus 0 carries all generation capacity.
pub fn random_grid<R: Rng>(rng: &mut R, n: usize, extra: usize) -> Grid {
    let mut lines = Vec::new();
    let mut push = |rng: &mut R, f: usize, t: usize| {
        let id = lines.len();
        lines.push(Line {
            id,
            from_bus: f,
            to_bus: t,
            resistance: rng.gen_range(0.001..0.05),
            reactance: rng.gen_range(0.02..0.5),
            rating: 1e6,
        });
    };
    for b in 1..n {
        let parent = rng.gen_range(0..b);
        push(rng, parent, b);
    }
    for _ in 0..extra {
        let f = rng.gen_range(0..n);
        let mut t = rng.gen_range(0..n);
        while t == f {
            t = rng.gen_range(0..n);
        }
        push(rng, f, t);
    }
    let buses = (0..n).map(|id| Bus { id, max_generation: if id == 0 { 1e6 } else { 0.0 } }).collect();
    Grid { base_mva: 100.0, buses, lines }
}

/// Injections summing to zero over every island of `active`.
pub fn balanced_injections<R: Rng>(rng: &mut R, grid: &Grid, active: &[bool]) -> Vec<f64> {
    let mut p: Vec<f64> = (0..grid.n_buses()).map(|_| rng.gen_range(-100.0..100.0)).collect();
    for comp in components(grid, active) {
        let mean = comp.iter().map(|&b| p[b]).sum::<f64>() / comp.len() as f64;
        for &b in &comp {
            p[b] -= mean;
        }
    }
    p
}

/// Connected components of the active network, each sorted, ordered by
/// their lowest bus.
pub fn components(grid: &Grid, active: &[bool]) -> Vec<Vec<usize>> {
    let n = grid.n_buses();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![s];
        let mut i = 0;
        while i < comp.len() {
            let u = comp[i];
            i += 1;
            for l in grid.lines.iter().filter(|l| active[l.id]) {
                let v = if l.from_bus == u {
                    l.to_bus
                } else if l.to_bus == u {
                    l.from_bus
                } else {
                    continue;
                };
                if !seen[v] {
                    seen[v] = true;
                    comp.push(v);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Gaussian elimination with partial pivoting on a dense copy.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// DC flows (MW, from→to) per line via a dense reduced B' solve on every
/// island, slack at the lowest bus. Inactive lines carry 0.
pub fn dense_dc_flows(grid: &Grid, active: &[bool], injections: &[f64]) -> Vec<f64> {
    let mut theta = vec![0.0; grid.n_buses()];
    for comp in components(grid, active) {
        let others = &comp[1..];
        let pos: BTreeMap<usize, usize> = others.iter().enumerate().map(|(i, &b)| (b, i)).collect();
        let m = others.len();
        let mut a = vec![vec![0.0; m]; m];
        for l in grid.lines.iter().filter(|l| active[l.id] && comp.contains(&l.from_bus)) {
            let y = 1.0 / l.reactance;
            let (i, j) = (pos.get(&l.from_bus), pos.get(&l.to_bus));
            if let Some(&i) = i {
                a[i][i] += y;
            }
            if let Some(&j) = j {
                a[j][j] += y;
            }
            if let (Some(&i), Some(&j)) = (i, j) {
                a[i][j] -= y;
                a[j][i] -= y;
            }
        }
        let p: Vec<f64> = others.iter().map(|&b| injections[b] / grid.base_mva).collect();
        if m > 0 {
            for (&b, t) in others.iter().zip(dense_solve(a, p)) {
                theta[b] = t;
            }
        }
    }
    grid.lines
        .iter()
        .map(|l| if active[l.id] { grid.base_mva * (theta[l.from_bus] - theta[l.to_bus]) / l.reactance } else { 0.0 })
        .collect()
}

/// Worst per-bus mismatch between injections and net outgoing flow.
pub fn kirchhoff_violation(grid: &Grid, flows: &[f64], injections: &[f64]) -> f64 {
    let mut net = injections.to_vec();
    for (l, f) in grid.lines.iter().zip(flows) {
        net[l.from_bus] -= f;
        net[l.to_bus] += f;
    }
    net.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// BFS hop counts from `s` over all physical lines.
pub fn bfs(grid: &Grid, s: usize) -> Vec<Option<usize>> {
    let mut d = vec![None; grid.n_buses()];
    d[s] = Some(0);
    let mut q = VecDeque::from([s]);
    while let Some(u) = q.pop_front() {
        for l in &grid.lines {
            let v = if l.from_bus == u {
                l.to_bus
            } else if l.to_bus == u {
                l.from_bus
            } else {
                continue;
            };
            if d[v].is_none() {
                d[v] = Some(d[u].unwrap() + 1);
                q.push_back(v);
            }
        }
    }
    d
}

/// Scenario × pair double loop.
pub fn brute_counts(traces: &[Vec<usize>], n_lines: usize) -> BTreeMap<(usize, usize), u64> {
    let mut out = BTreeMap::new();
    for a in 0..n_lines {
        for b in a + 1..n_lines {
            let c = traces.iter().filter(|t| t.contains(&a) && t.contains(&b)).count() as u64;
            if c > 0 {
                out.insert((a, b), c);
            }
        }
    }
    out
}

/// (from_bus, to_bus, line pair, score) of the best `k` pairs by full sort.
pub fn brute_selection(grid: &Grid, traces: &[Vec<usize>], k: usize) -> Vec<(usize, usize, (usize, usize), u64)> {
    let counts = brute_counts(traces, grid.n_lines());
    let dist: Vec<Vec<Option<usize>>> = (0..grid.n_buses()).map(|s| bfs(grid, s)).collect();
    let mut all = Vec::new();
    for (&(a, b), &count) in &counts {
        let (la, lb) = (&grid.lines[a], &grid.lines[b]);
        let ends_a = [la.from_bus, la.to_bus];
        let ends_b = [lb.from_bus, lb.to_bus];
        if ends_a.iter().any(|u| ends_b.contains(u)) {
            continue;
        }
        let mut pairs = Vec::new();
        for &u in &ends_a {
            for &v in &ends_b {
                if let Some(d) = dist[u][v] {
                    pairs.push((u.min(v), u.max(v), d));
                }
            }
        }
        let Some(near) = pairs.iter().map(|p| p.2).min() else { continue };
        let far = pairs.iter().map(|p| p.2).max().unwrap();
        if far < 2 {
            continue;
        }
        let (f, t, _) = pairs.iter().filter(|p| p.2 == far).min_by_key(|p| (p.0, p.1)).copied().unwrap();
        all.push((f, t, (a, b), count * near as u64));
    }
    all.sort_by(|x, y| y.3.cmp(&x.3).then(x.2.cmp(&y.2)));
    all.truncate(k);
    all
}

/// Recursive walk of one tree.
pub fn walk(node: &TreeNode, x: &[f64]) -> f64 {
    match node {
        TreeNode::Leaf { value, .. } => *value,
        TreeNode::Split { feature, threshold, left, right, .. } => {
            if x[*feature] < *threshold {
                walk(left, x)
            } else {
                walk(right, x)
            }
        }
    }
}

/// (tp, fp, tn, fn) by direct tally.
pub fn confusion(pred: &[bool], label: &[bool]) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for (&p, &y) in pred.iter().zip(label) {
        match (p, y) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, false) => c.2 += 1,
            (false, true) => c.3 += 1,
        }
    }
    c
}

/// Five-bus ring 0-1-2-3-4-0, generator at bus 0, 10/20/30/40 MW loads on
/// buses 1..4, all reactances 0.1 pu, base 100 MVA. Line ids follow the
/// ring: line i joins bus i and bus (i+1) % 5.
pub fn ring5() -> (Grid, GridState) {
    let lines = (0..5)
        .map(|i| Line { id: i, from_bus: i, to_bus: (i + 1) % 5, resistance: 0.01, reactance: 0.1, rating: 1000.0 })
        .collect();
    let buses = (0..5).map(|id| Bus { id, max_generation: if id == 0 { 500.0 } else { 0.0 } }).collect();
    let state = GridState { load: vec![0.0, 10.0, 20.0, 30.0, 40.0], generation: vec![100.0, 0.0, 0.0, 0.0, 0.0] };
    (Grid { base_mva: 100.0, buses, lines }, state)
}

pub const CASE16: &str = include_str!("../../../../data/case16.txt");
pub const PROFILES16: &str = include_str!("../../../../data/profiles16.csv");

/// Bundled case restricted to its first four hours, with a small trained
/// classifier and both regressors.
pub struct SmallStudy {
    pub grid: Grid,
    pub set: SampleSet,
    pub forest: BoostedForest,
    pub mixed: Regressor,
    pub blackout: Regressor,
}

pub fn small_study() -> SmallStudy {
    let grid = parse_case(CASE16).unwrap();
    let profiles = parse_profiles(PROFILES16, grid.n_buses()).unwrap();
    let set = generate_dataset(&grid, &profiles[..4], 2, 7, SplitFractions::default()).unwrap();
    let train_idx = set.indices_in(Split::Train);
    let mean = positive_mean_mw(&set, &train_idx).unwrap();
    let train = flat_samples(&grid, &set, &train_idx, Some(mean)).unwrap();
    let val = flat_samples(&grid, &set, &set.indices_in(Split::Val), None).unwrap();
    let forest = train_gbt(&train, &val, &GbtParams { n_rounds: 20, ..GbtParams::default() }).unwrap();
    let topology = AugmentedTopology::physical_only(&grid);
    let regressor = |population| {
        let config = TrainConfig {
            epochs: 4,
            batch_size: 32,
            architecture: Architecture { hidden: 8, layers: 2 },
            population,
            ..TrainConfig::default()
        };
        let ckpt = train_gnn(&grid, &set, &topology, &config).unwrap();
        Regressor { model: ckpt.model, topology: topology.clone() }
    };
    let mixed = regressor(Population::Mixed);
    let blackout = regressor(Population::BlackoutOnly);
    SmallStudy { grid, set, forest, mixed, blackout }
}
