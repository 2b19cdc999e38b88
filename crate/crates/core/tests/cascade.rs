mod common;

use blackout::cascade::{
    assign_splits, generate_dataset, read_dataset, simulate_cascade, write_dataset, Split, SplitFractions, TraceEntry,
};
use blackout::grid::{Bus, Grid, GridState, Line, Profile};
use common::{dense_dc_flows, random_grid, ring5};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn ring_outage_overloads_the_neighbour() {
    let (mut grid, state) = ring5();
    let injections = state.injections();

    // intact ring with equal reactances: flow f on 0→1 and f − 10, f − 30,
    // f − 60, f − 100 around the loop; the loop sum vanishes, so f = 40
    let intact = [40.0, 30.0, 10.0, -20.0, -60.0];
    let dense = dense_dc_flows(&grid, &[true; 5], &injections);
    for (a, b) in intact.iter().zip(&dense) {
        assert!((a - b).abs() < 1e-9);
    }
    // without line 0 the rest is the chain 0-4-3-2-1 and line 4 carries all
    // 100 MW back towards bus 4
    let post = [0.0, -10.0, -30.0, -60.0, -100.0];
    let dense = dense_dc_flows(&grid, &[false, true, true, true, true], &injections);
    for (a, b) in post.iter().zip(&dense) {
        assert!((a - b).abs() < 1e-9);
    }

    grid.lines[4].rating = 0.9 * 100.0;
    assert!(intact.iter().zip(&grid.lines).all(|(f, l)| f64::abs(*f) <= l.rating));
    let base = simulate_cascade(&grid, &state, &[]).unwrap();
    assert!(base.failure_trace.is_empty());

    let r = simulate_cascade(&grid, &state, &[0]).unwrap();
    assert_eq!(r.failure_trace, vec![TraceEntry { round: 0, line: 0 }, TraceEntry { round: 1, line: 4 }]);
    assert_eq!(r.rounds, 1);
    // buses 1..4 lose their only supply
    assert!((r.blackout_mw - 100.0).abs() < 1e-9);
    assert_eq!(r.shed_per_bus[0], 0.0);
}

fn arb_stressed() -> impl Strategy<Value = (Grid, GridState, Vec<usize>)> {
    (4usize..12, 0usize..8, any::<u64>(), 1usize..4).prop_map(|(n, extra, seed, k)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut grid = random_grid(&mut rng, n, extra);
        for b in &mut grid.buses {
            b.max_generation = if rng.gen_bool(0.3) { rng.gen_range(0.0..150.0) } else { 0.0 };
        }
        grid.buses[0].max_generation = 100.0;
        let load: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..40.0)).collect();
        let total: f64 = load.iter().sum();
        let cap = grid.total_capacity();
        let generation = grid.buses.iter().map(|b| b.max_generation * (total / cap).min(1.0)).collect();
        for l in &mut grid.lines {
            l.rating = rng.gen_range(5.0..80.0);
        }
        let failures = (0..k).map(|_| rng.gen_range(0..grid.n_lines())).collect();
        (grid, GridState { load, generation }, failures)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn blackout_is_bounded_and_consistent((grid, state, failures) in arb_stressed()) {
        let r = simulate_cascade(&grid, &state, &failures).unwrap();
        let total = state.total_load();
        prop_assert!(r.blackout_mw >= 0.0 && r.blackout_mw <= total + 1e-9);
        prop_assert!((r.blackout_mw - r.shed_per_bus.iter().sum::<f64>()).abs() < 1e-9);
        prop_assert!(r.failure_trace.windows(2).all(|w| w[0].round <= w[1].round));
        prop_assert!(r.failure_trace.iter().take_while(|t| t.round == 0).count() >= 1);
    }

    #[test]
    fn simulation_is_deterministic((grid, state, failures) in arb_stressed()) {
        let a = simulate_cascade(&grid, &state, &failures).unwrap();
        let b = simulate_cascade(&grid, &state, &failures).unwrap();
        prop_assert_eq!(a.blackout_mw.to_bits(), b.blackout_mw.to_bits());
        prop_assert_eq!(a.failure_trace, b.failure_trace);
        prop_assert_eq!(a.shed_per_bus, b.shed_per_bus);
    }

    #[test]
    fn final_network_is_a_fixed_point((grid, state, failures) in arb_stressed()) {
        let r = simulate_cascade(&grid, &state, &failures).unwrap();
        let down: Vec<usize> = r.final_active.iter().enumerate().filter(|(_, a)| !**a).map(|(i, _)| i).collect();
        let again = simulate_cascade(&grid, &state, &down).unwrap();
        prop_assert!(again.failure_trace.iter().all(|t| t.round == 0));
        prop_assert_eq!(again.rounds, 0);
        prop_assert!((again.blackout_mw - r.blackout_mw).abs() < 1e-9);
    }

    #[test]
    fn failing_every_line_sheds_all_load((grid, state, _f) in arb_stressed()) {
        // buses carrying load but no generation lose everything; generator
        // buses serve their own load up to capacity
        let all: Vec<usize> = (0..grid.n_lines()).collect();
        let r = simulate_cascade(&grid, &state, &all).unwrap();
        let expect: f64 = grid.buses.iter().map(|b| (state.load[b.id] - b.max_generation).max(0.0)).sum();
        prop_assert!((r.blackout_mw - expect).abs() < 1e-9);
    }

    #[test]
    fn splits_are_deterministic_and_proportional(n in 1usize..3000, seed in any::<u64>()) {
        let f = SplitFractions::default();
        let a = assign_splits(n, seed, f);
        prop_assert_eq!(&a, &assign_splits(n, seed, f));
        let count = |s| a.iter().filter(|&&x| x == s).count() as f64;
        prop_assert!((count(Split::Train) - 0.70 * n as f64).abs() <= 1.0);
        prop_assert!((count(Split::Val) - 0.15 * n as f64).abs() <= 1.0);
        prop_assert!((count(Split::Test) - 0.15 * n as f64).abs() <= 1.0);
    }
}

#[test]
fn all_lines_failed_without_local_generation_sheds_total_load() {
    let (grid, state) = ring5();
    let mut grid = grid;
    grid.buses[0].max_generation = 0.0;
    let mut state = state;
    state.generation = vec![0.0; 5];
    let r = simulate_cascade(&grid, &state, &[0, 1, 2, 3, 4]).unwrap();
    assert_eq!(r.blackout_mw, state.total_load());

    let (grid, state) = ring5();
    let r = simulate_cascade(&grid, &state, &[0, 1, 2, 3, 4]).unwrap();
    assert_eq!(r.blackout_mw, state.total_load());
}

#[test]
fn five_lines_two_profiles_give_twenty_samples() {
    let grid = Grid {
        base_mva: 100.0,
        buses: (0..4).map(|id| Bus { id, max_generation: if id == 0 { 200.0 } else { 0.0 } }).collect(),
        lines: [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]
            .iter()
            .enumerate()
            .map(|(id, &(f, t))| Line { id, from_bus: f, to_bus: t, resistance: 0.01, reactance: 0.1, rating: 40.0 })
            .collect(),
    };
    let profiles: Vec<Profile> = (0..2)
        .map(|h| Profile { hour_id: h, load: vec![0.0, 20.0, 30.0 + h as f64, 10.0], generation: vec![60.0 + h as f64, 0.0, 0.0, 0.0] })
        .collect();
    let set = generate_dataset(&grid, &profiles, 2, 5, SplitFractions::default()).unwrap();
    assert_eq!(set.samples.len(), 20);
    for (i, s) in set.samples.iter().enumerate() {
        let state = set.state_of(s);
        let r = simulate_cascade(&grid, state, &s.failures).unwrap();
        assert_eq!(s.blackout_mw, r.blackout_mw, "sample {i}");
    }

    let mut buf = Vec::new();
    write_dataset(&grid, &set, &mut buf).unwrap();
    let back = read_dataset(&grid, buf.as_slice()).unwrap();
    assert_eq!(back.samples.len(), 20);
    for (a, b) in back.samples.iter().zip(&set.samples) {
        assert_eq!((a.profile, &a.failures, a.blackout_mw, a.split), (b.profile, &b.failures, b.blackout_mw, b.split));
    }
}
