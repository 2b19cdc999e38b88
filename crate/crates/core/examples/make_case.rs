//! Writes the bundled 16-bus example case and its hourly profiles.
//!
//! ```text
//! cargo run --release -p blackout --example make_case -- data/
//! ```
//!
//! The network is a 4×4 lattice. Four buses host generation, the other
//! twelve host load. Line ratings are a seeded per-line multiple of the
//! largest intact-network flow seen over all hours (floored at a fraction of
//! the mean), so the intact network never overloads while a sizeable share
//! of double outages cascade.

use std::path::PathBuf;

use blackout::cascade::{generate_dataset, is_blackout, SplitFractions};
use blackout::dcflow::compute_flows;
use blackout::grid::{apply_profile, parse_case, parse_profiles, validate, write_profiles, Bus, Grid, Line, Profile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIDE: usize = 4;
const HOURS: usize = 52;
const SEED: u64 = 2024;
const GENERATORS: [(usize, f64); 4] = [(1, 320.0), (6, 180.0), (11, 260.0), (12, 140.0)];
const RATING_MARGIN: (f64, f64) = (1.5, 2.0);
/// Fraction of the mean line peak below which a line is rated as if it
/// carried that much.
const RATING_FLOOR: f64 = 0.8;

fn lattice(rng: &mut ChaCha8Rng) -> Grid {
    let n = SIDE * SIDE;
    let buses = (0..n)
        .map(|id| Bus { id, max_generation: GENERATORS.iter().find(|g| g.0 == id).map_or(0.0, |g| g.1) })
        .collect();
    let mut lines = Vec::new();
    for r in 0..SIDE {
        for c in 0..SIDE {
            let b = r * SIDE + c;
            let mut push = |to: usize| {
                let x: f64 = (rng.gen_range(0.04..0.20f64) * 1000.0).round() / 1000.0;
                let r_pu = (x / rng.gen_range(4.0..10.0f64) * 10000.0).round() / 10000.0;
                lines.push(Line { id: lines.len(), from_bus: b, to_bus: to, resistance: r_pu, reactance: x, rating: 1.0 });
            };
            if c + 1 < SIDE {
                push(b + 1);
            }
            if r + 1 < SIDE {
                push(b + SIDE);
            }
        }
    }
    Grid { base_mva: 100.0, buses, lines }
}

fn profiles(grid: &Grid, rng: &mut ChaCha8Rng) -> Vec<Profile> {
    let n = grid.n_buses();
    let base: Vec<f64> = (0..n)
        .map(|b| if grid.buses[b].max_generation > 0.0 { 0.0 } else { rng.gen_range(25.0..75.0f64) })
        .collect();
    let capacity = grid.total_capacity();
    (0..HOURS)
        .map(|h| {
            // two daily cycles across the sampled hours, peak near 1.0
            let phase = (h as f64 / HOURS as f64) * 4.0 * std::f64::consts::PI;
            let level = 0.78 + 0.18 * phase.sin().max(-0.6);
            let load: Vec<f64> =
                base.iter().map(|&l| (l * level * rng.gen_range(0.9..1.1) * 100.0).round() / 100.0).collect();
            let total: f64 = load.iter().sum();
            let generation = grid.buses.iter().map(|b| b.max_generation * total / capacity).collect();
            Profile { hour_id: 1000 + h as i64, load, generation }
        })
        .collect()
}

fn set_ratings(grid: &mut Grid, hours: &[Profile], rng: &mut ChaCha8Rng) {
    let mut peak = vec![0.0f64; grid.n_lines()];
    for p in hours {
        let state = apply_profile(grid, p).expect("feasible profile");
        let flows = compute_flows(grid, &vec![true; grid.n_lines()], &state.injections()).expect("intact flow");
        for (m, f) in peak.iter_mut().zip(&flows.flows) {
            *m = m.max(f.abs());
        }
    }
    let floor = RATING_FLOOR * peak.iter().sum::<f64>() / peak.len() as f64;
    for (line, m) in grid.lines.iter_mut().zip(peak) {
        let margin = rng.gen_range(RATING_MARGIN.0..RATING_MARGIN.1);
        line.rating = ((m.max(floor) * margin) * 10.0).ceil() / 10.0;
    }
}

fn main() {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data".into()));
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut grid = lattice(&mut rng);
    let hours = profiles(&grid, &mut rng);
    set_ratings(&mut grid, &hours, &mut rng);

    let case = format!(
        "# 16-bus lattice example case, generated by examples/make_case.rs (seed {SEED})\n{}",
        grid.to_case_string()
    );
    let profile_csv = write_profiles(&hours);
    // what gets written must read back to the same data
    let parsed = parse_case(&case).expect("case parses");
    assert!(validate(&parsed).is_empty());
    assert_eq!(parse_profiles(&profile_csv, parsed.n_buses()).expect("profiles parse"), hours);

    std::fs::create_dir_all(&out).expect("output directory");
    std::fs::write(out.join("case16.txt"), case).expect("write case");
    std::fs::write(out.join("profiles16.csv"), profile_csv).expect("write profiles");

    let set = generate_dataset(&parsed, &hours, 2, 0, SplitFractions::default()).expect("dataset");
    let sizes: Vec<f64> = set.samples.iter().map(|s| s.blackout_mw).filter(|&mw| is_blackout(mw)).collect();
    let cascaded = set.samples.iter().filter(|s| s.trace.iter().any(|t| t.round > 0)).count();
    let mut sorted = sizes.clone();
    sorted.sort_by(f64::total_cmp);
    println!(
        "{} samples, {:.1}% blackout, {:.1}% with cascade trips, median blackout {:.1} MW, max {:.1} MW",
        set.samples.len(),
        100.0 * sizes.len() as f64 / set.samples.len() as f64,
        100.0 * cascaded as f64 / set.samples.len() as f64,
        sorted.get(sorted.len() / 2).copied().unwrap_or(0.0),
        sorted.last().copied().unwrap_or(0.0),
    );
}
