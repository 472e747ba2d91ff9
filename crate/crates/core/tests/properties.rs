mod common;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use proptest::prelude::*;

use nmcs_core::adversary::{presimulate, AttackSpec};
use nmcs_core::experiment::{DemandSource, NetworkSource, ScenarioConfig};
use nmcs_core::metrics::{
    affected_users, aggregate, classify, impact_report, sample_ratio, AggregateKey,
};
use nmcs_core::mobility::{
    generate_demand, user_count, DemandProfile, Role, SimConfig, SyntheticDemand,
};
use nmcs_core::network::{betweenness_centrality, generate_grid, shortest_path, GridSpec, NodeIdx};
use nmcs_core::report::Report;
use nmcs_core::server::{SpeedWindow, WindowConfig};

use common::random_graph;

fn small_grid_config(n_vehicles: usize, seed: u64, rate: f64) -> ScenarioConfig {
    ScenarioConfig {
        network: NetworkSource::Grid(GridSpec {
            rows: 3,
            cols: 3,
            edge_length: 150.0,
            speed_limit: 10.0,
            lanes: 1,
            arterials: vec![],
        }),
        demand: DemandSource::Synthetic(SyntheticDemand {
            n_vehicles,
            depart_start: 0,
            depart_end: 600,
            profile: DemandProfile::CalmEvening,
            seed,
            directional_share: 0.8,
        }),
        penetration_rate: rate,
        window: WindowConfig::default(),
        sim: SimConfig {
            seed,
            ..SimConfig::default()
        },
        attack: None,
        horizon: 5000,
        record_estimates: false,
        output_dir: None,
    }
}

fn target_ids() -> impl Strategy<Value = &'static str> {
    prop::sample::select(vec!["n1_1-n1_2", "n0_1-n1_1", "n1_0-n1_1", "n2_1-n1_1"])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn uniform_time_scaling_keeps_routes_and_scores(rows in 2usize..5, cols in 2usize..5, scale in 0.1f64..50.0) {
        let net = generate_grid(rows, cols, 100.0, 10.0, 1).unwrap();
        let unit = vec![1.0; net.edge_count()];
        let scaled = vec![scale; net.edge_count()];
        let a = betweenness_centrality(&net, &unit);
        let b = betweenness_centrality(&net, &scaled);
        for (x, y) in a.edge_bc.iter().zip(&b.edge_bc) {
            prop_assert!((x - y).abs() <= 1e-9 * x.max(1.0));
        }
        for (x, y) in a.node_bc.iter().zip(&b.node_bc) {
            prop_assert!((x - y).abs() <= 1e-9 * x.max(1.0));
        }
        let last = NodeIdx(net.node_count() - 1);
        let r1 = shortest_path(&net, &unit, NodeIdx(0), last).unwrap();
        let r2 = shortest_path(&net, &scaled, NodeIdx(0), last).unwrap();
        prop_assert_eq!(r1.edges, r2.edges);
    }

    #[test]
    fn shortest_paths_are_deterministic_and_valid(seed in 0u64..10_000) {
        let g = random_graph(seed);
        let n = g.net.node_count();
        for s in 0..n {
            for t in 0..n {
                let a = shortest_path(&g.net, &g.times, NodeIdx(s), NodeIdx(t));
                let b = shortest_path(&g.net, &g.times, NodeIdx(s), NodeIdx(t));
                prop_assert_eq!(&a, &b);
                if let Some(r) = a {
                    prop_assert!(r.is_connected(&g.net) && r.is_simple());
                    let sum: f64 = r.edges.iter().map(|e| g.times[e.0]).sum();
                    prop_assert_eq!(sum, r.total_time);
                }
            }
        }
    }

    #[test]
    fn scores_are_non_negative(seed in 0u64..10_000) {
        let g = random_graph(seed);
        let bc = betweenness_centrality(&g.net, &g.times);
        prop_assert!(bc.node_bc.iter().chain(&bc.edge_bc).all(|&x| x >= 0.0));
    }

    #[test]
    fn sybil_only_cells_estimate_the_sybil_speed(count in 1usize..40, speed in 0.1f64..15.0, t in 0u64..1000) {
        let mut w = SpeedWindow::new(1, WindowConfig::default()).unwrap();
        w.advance(t);
        for i in 0..count {
            w.ingest(&Report { id: format!("s{i}").into(), edge: nmcs_core::network::EdgeIdx(0), speed, t });
        }
        let (estimate, samples) = w.estimate(nmcs_core::network::EdgeIdx(0)).unwrap();
        prop_assert!((estimate - speed).abs() <= 1e-12 * speed.max(1.0));
        prop_assert_eq!(samples, count as u64);
    }

    #[test]
    fn mixed_cell_mean_lies_between_inputs(sybils in 1usize..20, benign in 1usize..20, low in 0.1f64..3.0, high in 5.0f64..20.0) {
        let mut w = SpeedWindow::new(1, WindowConfig::default()).unwrap();
        w.advance(10);
        let e = nmcs_core::network::EdgeIdx(0);
        for i in 0..sybils {
            w.ingest(&Report { id: format!("s{i}").into(), edge: e, speed: low, t: 10 });
        }
        for i in 0..benign {
            w.ingest(&Report { id: format!("b{i}").into(), edge: e, speed: high, t: 10 });
        }
        let expected = (sybils as f64 * low + benign as f64 * high) / (sybils + benign) as f64;
        let (estimate, _) = w.estimate(e).unwrap();
        prop_assert!((estimate - expected).abs() <= 1e-9 * expected);
        prop_assert!(low <= estimate && estimate <= high);
    }

    #[test]
    fn user_count_rounds_half_up(n in 0usize..5000, rate in 0.0f64..=1.0) {
        let users = user_count(n, rate);
        prop_assert!(users <= n);
        prop_assert!((users as f64 - n as f64 * rate).abs() <= 0.5 + 1e-9);
    }

    #[test]
    fn sample_ratio_is_a_fraction(dne in 0usize..1000, de in 0usize..1000) {
        match sample_ratio(dne, de) {
            None => prop_assert_eq!(dne + de, 0),
            Some(r) => prop_assert!((0.0..=1.0).contains(&r)),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn synthetic_demand_has_exact_user_share(n in 1usize..200, seed in 0u64..1000, rate in 0.05f64..=1.0) {
        let cfg = small_grid_config(n, seed, rate);
        let net = cfg.build_network().unwrap();
        let spec = match &cfg.demand { DemandSource::Synthetic(s) => s.clone(), _ => unreachable!() };
        let demand = generate_demand(&net, &spec, rate).unwrap();
        let users = demand.iter().filter(|d| d.role == Role::NmcsUser).count();
        prop_assert_eq!(demand.len(), n);
        prop_assert_eq!(users, user_count(n, rate));
        prop_assert_eq!(&demand, &generate_demand(&net, &spec, rate).unwrap());
    }

    #[test]
    fn presimulated_sybils_respect_capacity(
        target in target_ids(),
        lanes in 1u32..3,
        speed in 0.3f64..12.0,
        duration in 0u64..900,
    ) {
        let net = Arc::new(
            GridSpec { rows: 3, cols: 3, edge_length: 120.0, speed_limit: 10.0, lanes, arterials: vec![] }
                .build()
                .unwrap(),
        );
        let sim = SimConfig::default();
        let spec = AttackSpec {
            targets: vec![target.to_string()],
            start: 100,
            duration,
            sybil_speed: speed,
            max_sybils: None,
            max_active_per_target: None,
        };
        let trace = presimulate(&net, &spec, &sim).unwrap();
        let edge = net.edge(net.edge_idx(target).unwrap());
        let capacity = (edge.lanes * edge.lane_capacity(sim.vehicle_length, sim.min_gap)) as u64;
        prop_assert!(trace.summary().max_concurrent <= capacity);
        let mut seen = HashSet::new();
        let mut per_t: BTreeMap<u64, u64> = BTreeMap::new();
        for r in trace.reports() {
            prop_assert!(r.speed <= speed.min(edge.speed_limit) + 1e-12);
            prop_assert!(seen.insert((r.id.clone(), r.t)), "duplicate report");
            *per_t.entry(r.t).or_default() += 1;
        }
        prop_assert!(per_t.values().all(|&n| n <= capacity));
        if duration == 0 {
            prop_assert!(trace.is_empty());
        }
    }

    #[test]
    fn runs_keep_headway_and_conserve_vehicles(n in 5usize..60, seed in 0u64..1000, rate in 0.1f64..=1.0) {
        let scenario = small_grid_config(n, seed, rate).resolve().unwrap();
        let run = scenario.run_baseline().unwrap();
        let s = run.stats.sim;
        prop_assert_eq!(s.violations(), 0);
        prop_assert_eq!(s.inserted, n as u64);
        prop_assert_eq!(s.arrived + run.stats.unfinished, n as u64);
        prop_assert_eq!(run.stats.unfinished, 0);
        for v in &run.vehicles {
            let events = run.events_of(&v.id);
            for pair in events.windows(2) {
                prop_assert_eq!(pair[0].exit_time, Some(pair[1].entry_time));
            }
        }
    }

    #[test]
    fn classification_partitions_affected_users(
        n in 20usize..60,
        seed in 0u64..1000,
        target in target_ids(),
        start in 0u64..300,
        duration in 0u64..900,
        speed in 0.3f64..5.0,
    ) {
        let scenario = small_grid_config(n, seed, 0.7).resolve().unwrap();
        let spec = AttackSpec {
            targets: vec![target.to_string()],
            start,
            duration,
            sybil_speed: speed,
            max_sybils: None,
            max_active_per_target: None,
        };
        let base = scenario.run_baseline().unwrap();
        let attack = scenario.run_attack(&spec).unwrap();
        prop_assert_eq!(attack.stats.sim.violations(), 0);
        let targets = spec.resolve(&scenario.net).unwrap();
        let affected = affected_users(&base, &targets, spec.start, spec.end());
        let classes = classify(&affected, &attack, &targets, spec.start, spec.end());
        let mut union = BTreeSet::new();
        let mut total = 0;
        for set in [&classes.did_enter, &classes.did_not_enter, &classes.missing] {
            total += set.len();
            union.extend(set.iter().cloned());
        }
        prop_assert_eq!(total, union.len());
        prop_assert_eq!(union.len(), affected.len());
        prop_assert!(union.iter().all(|id| affected.contains(id)));

        let report = impact_report(&scenario.net, &base, &attack, &spec).unwrap();
        if let Some(r) = report.sample_ratio {
            prop_assert!((0.0..=1.0).contains(&r));
        }
        for v in &report.vehicles {
            prop_assert!(v.time_loss_base >= 0.0 && v.time_loss_attack >= 0.0);
        }
        if duration == 0 {
            prop_assert!(report.flow_delta.values().all(|&d| d == 0));
            prop_assert_eq!(&base.traces, &attack.traces);
        }

        let key = AggregateKey { target: target.into(), duration, profile: "p".into() };
        let summary = aggregate(&[(key.clone(), &report), (key, &report)]);
        let flat: Vec<f64> = report
            .did_not_enter_travel_changes()
            .into_iter()
            .chain(report.did_not_enter_travel_changes())
            .collect();
        match summary.weighted_mean_travel_time_change_pct {
            None => prop_assert!(flat.is_empty()),
            Some(m) => {
                let expected = flat.iter().sum::<f64>() / flat.len() as f64;
                prop_assert!((m - expected).abs() <= 1e-9 * expected.abs().max(1.0));
            }
        }
    }
}
