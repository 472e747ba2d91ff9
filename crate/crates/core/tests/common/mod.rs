#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nmcs_core::adversary::VictimScenario;
use nmcs_core::experiment::{DemandSource, NetworkSource, Scenario, ScenarioConfig};
use nmcs_core::mobility::{DemandEntry, DemandProfile, Role, SimConfig, SyntheticDemand};
use nmcs_core::network::{
    Arterial, ArterialAxis, Edge, EdgeIdx, GridSpec, Node, NodeIdx, RoadNetwork,
};
use nmcs_core::server::WindowConfig;

pub const DIAMOND_LIMIT: f64 = 13.9;
pub const DIAMOND_TARGET: &str = "BD";
pub const DIAMOND_VICTIM: &str = "victim";

fn node(id: &str, x: f64, y: f64) -> Node {
    Node {
        id: id.into(),
        x,
        y,
    }
}

fn edge(id: &str, from: &str, to: &str, length: f64) -> Edge {
    Edge {
        id: id.into(),
        from: from.into(),
        to: to.into(),
        length,
        lanes: 1,
        speed_limit: DIAMOND_LIMIT,
    }
}

/// Two branches from A to D: a short one through B (the target is B->D) and
/// a long one through C. A feeder road F->B joins the short branch.
pub fn diamond() -> RoadNetwork {
    RoadNetwork::new(
        vec![
            node("S", 0.0, 0.0),
            node("A", 300.0, 0.0),
            node("B", 500.0, 0.0),
            node("C", 630.0, 600.0),
            node("D", 700.0, 0.0),
            node("T", 900.0, 0.0),
            node("F", 500.0, -200.0),
        ],
        vec![
            edge("SA", "S", "A", 300.0),
            edge("AB", "A", "B", 200.0),
            edge("BD", "B", "D", 200.0),
            edge("AC", "A", "C", 660.0),
            edge("CD", "C", "D", 660.0),
            edge("DT", "D", "T", 200.0),
            edge("FB", "F", "B", 200.0),
        ],
    )
    .unwrap()
}

/// Sybil speed below which the short branch looks slower than the long one.
pub fn diamond_threshold() -> f64 {
    let long = (660.0 + 660.0) / DIAMOND_LIMIT;
    let short_rest = 200.0 / DIAMOND_LIMIT;
    200.0 / (long - short_rest)
}

fn user(id: &str, depart: u64, origin: &str, destination: &str) -> DemandEntry {
    DemandEntry {
        id: id.into(),
        depart,
        origin: origin.into(),
        destination: destination.into(),
        role: Role::NmcsUser,
    }
}

fn hand_config(horizon: u64) -> ScenarioConfig {
    ScenarioConfig {
        network: NetworkSource::Path("diamond.json".into()),
        demand: DemandSource::Path("diamond-demand.json".into()),
        penetration_rate: 1.0,
        window: WindowConfig::default(),
        sim: SimConfig::default(),
        attack: None,
        horizon,
        record_estimates: true,
        output_dir: None,
    }
}

/// One victim driving S->T; `feeders` benign users enter the target from F
/// every 20 s.
pub fn diamond_victim(feeders: usize) -> VictimScenario {
    let mut demand = vec![user(DIAMOND_VICTIM, 330, "SA", "DT")];
    for i in 0..feeders {
        demand.push(user(&format!("f{i:02}"), 20 * i as u64, "FB", "DT"));
    }
    VictimScenario {
        scenario: Scenario::new(hand_config(2000), Arc::new(diamond()), demand),
        victim: DIAMOND_VICTIM.into(),
        target: DIAMOND_TARGET.into(),
        start: 0,
        duration: 900,
    }
}

pub const GRID_TARGETS: [&str; 2] = ["n2_1-n3_1", "n2_4-n3_4"];
pub const GRID_START: u64 = 450;
pub const GRID_DURATIONS: [u64; 3] = [300, 600, 900];

/// 6x6 grid with two fast two-lane north-south arterials.
pub fn arterial_grid() -> GridSpec {
    let arterial = |index| Arterial {
        axis: ArterialAxis::Column,
        index,
        speed_limit: 16.7,
        lanes: 2,
    };
    GridSpec {
        rows: 6,
        cols: 6,
        edge_length: 400.0,
        speed_limit: 8.3,
        lanes: 1,
        arterials: vec![arterial(1), arterial(4)],
    }
}

pub fn grid_config(profile: DemandProfile) -> ScenarioConfig {
    ScenarioConfig {
        network: NetworkSource::Grid(arterial_grid()),
        demand: DemandSource::Synthetic(SyntheticDemand {
            n_vehicles: 500,
            depart_start: 0,
            depart_end: 1800,
            profile,
            seed: 42,
            directional_share: 0.8,
        }),
        penetration_rate: 0.5,
        window: WindowConfig::default(),
        sim: SimConfig {
            seed: 42,
            ..SimConfig::default()
        },
        attack: None,
        horizon: 7200,
        record_estimates: false,
        output_dir: None,
    }
}

/// A small random directed graph with integer edge times in 1..=4 and node
/// ids `v00`, `v01`, ...
pub struct RandomGraph {
    pub net: RoadNetwork,
    pub times: Vec<f64>,
}

pub fn random_graph(seed: u64) -> RandomGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=12usize);
    let p = rng.random_range(0.15..0.35);
    let nodes: Vec<Node> = (0..n)
        .map(|i| node(&format!("v{i:02}"), i as f64, 0.0))
        .collect();
    let mut edges = Vec::new();
    let mut times = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v && rng.random_bool(p) {
                let t = rng.random_range(1..=4u32) as f64;
                edges.push(Edge {
                    id: format!("e{u:02}_{v:02}"),
                    from: format!("v{u:02}"),
                    to: format!("v{v:02}"),
                    length: t,
                    lanes: 1,
                    speed_limit: 1.0,
                });
                times.push(t);
            }
        }
    }
    RandomGraph {
        net: RoadNetwork::new(nodes, edges).unwrap(),
        times,
    }
}

/// Every simple path from each source, grouped by destination. Paths are
/// edge index lists.
pub fn all_simple_paths(net: &RoadNetwork) -> BTreeMap<(usize, usize), Vec<Vec<usize>>> {
    fn walk(
        net: &RoadNetwork,
        src: usize,
        at: usize,
        seen: &mut Vec<bool>,
        path: &mut Vec<usize>,
        out: &mut BTreeMap<(usize, usize), Vec<Vec<usize>>>,
    ) {
        if at != src {
            out.entry((src, at)).or_default().push(path.clone());
        }
        for &e in net.out_edges(NodeIdx(at)) {
            let w = net.target(e).0;
            if seen[w] {
                continue;
            }
            seen[w] = true;
            path.push(e.0);
            walk(net, src, w, seen, path, out);
            path.pop();
            seen[w] = false;
        }
    }
    let mut out = BTreeMap::new();
    for s in 0..net.node_count() {
        let mut seen = vec![false; net.node_count()];
        seen[s] = true;
        walk(net, s, s, &mut seen, &mut Vec::new(), &mut out);
    }
    out
}

/// Length and edge lists of every shortest path, keyed by (source, target).
pub type ShortestPaths = BTreeMap<(usize, usize), (u64, Vec<Vec<usize>>)>;

/// Shortest paths per ordered pair by exhaustive enumeration, using exact
/// integer path lengths.
pub fn enumerated_shortest(graph: &RandomGraph) -> ShortestPaths {
    let int_time = |e: usize| graph.times[e] as u64;
    all_simple_paths(&graph.net)
        .into_iter()
        .map(|(pair, paths)| {
            let best = paths
                .iter()
                .map(|p| p.iter().map(|&e| int_time(e)).sum::<u64>())
                .min()
                .unwrap();
            let shortest: Vec<Vec<usize>> = paths
                .into_iter()
                .filter(|p| p.iter().map(|&e| int_time(e)).sum::<u64>() == best)
                .collect();
            (pair, (best, shortest))
        })
        .collect()
}

/// Exact node and edge betweenness: for every ordered pair, the share of its
/// shortest paths through each interior node and each edge.
pub fn exact_betweenness(graph: &RandomGraph) -> (Vec<BigRational>, Vec<BigRational>) {
    let net = &graph.net;
    let mut node_bc = vec![BigRational::zero(); net.node_count()];
    let mut edge_bc = vec![BigRational::zero(); net.edge_count()];
    for (_, (_, paths)) in enumerated_shortest(graph) {
        let share = BigRational::new(BigInt::one(), BigInt::from(paths.len()));
        for path in &paths {
            for (k, &e) in path.iter().enumerate() {
                edge_bc[e] += &share;
                if k > 0 {
                    node_bc[net.source(EdgeIdx(e)).0] += &share;
                }
            }
        }
    }
    (node_bc, edge_bc)
}

pub fn rational_to_f64(r: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().unwrap()
}

/// Streams `n_reports` random reports through a window and, at every slide,
/// compares each edge estimate with a from-scratch recomputation over the
/// retained raw reports. Returns the largest relative error and the number
/// of estimates compared.
pub fn window_stream_check(seed: u64, n_reports: usize) -> (f64, usize) {
    use std::collections::HashMap;

    use nmcs_core::report::Report;
    use nmcs_core::server::SpeedWindow;

    const EDGES: usize = 6;
    const IDS: usize = 40;
    const PER_SECOND: usize = 50;
    let config = WindowConfig {
        w_size: 300,
        w_slide: 30,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut window = SpeedWindow::new(EDGES, config).unwrap();
    let ids: Vec<Arc<str>> = (0..IDS).map(|i| Arc::from(format!("u{i}"))).collect();
    // (id, t) -> (edge, speed); later reports overwrite earlier ones.
    let mut kept: HashMap<(usize, u64), (usize, f64)> = HashMap::new();
    let mut sent = 0;
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    let mut now = 0u64;
    while sent < n_reports {
        window.advance(now);
        for _ in 0..PER_SECOND.min(n_reports - sent) {
            sent += 1;
            let lag = match rng.random_range(0..20u32) {
                0 => rng.random_range(0..=320u64),
                1 => 0u64.wrapping_sub(1),
                _ => 0,
            };
            let t = if lag == u64::MAX {
                now + 1
            } else {
                now.saturating_sub(lag)
            };
            let id = rng.random_range(0..IDS);
            let edge = rng.random_range(0..EDGES);
            let speed = rng.random_range(0.0..20.0);
            let accepted = window.ingest(&Report {
                id: ids[id].clone(),
                edge: EdgeIdx(edge),
                speed,
                t,
            });
            let in_window = t <= now && t + config.w_size > now;
            assert_eq!(accepted, in_window, "acceptance of t={t} at now={now}");
            if in_window {
                kept.insert((id, t), (edge, speed));
            }
        }
        if config.is_slide(now) {
            let mut cells: BTreeMap<(usize, u64), (f64, u32)> = BTreeMap::new();
            for (&(_, t), &(edge, speed)) in &kept {
                if t + config.w_size > now {
                    let c = cells.entry((edge, t)).or_default();
                    c.0 += speed;
                    c.1 += 1;
                }
            }
            for edge in 0..EDGES {
                let means: Vec<f64> = cells
                    .range((edge, 0)..(edge + 1, 0))
                    .map(|(_, &(sum, n))| sum / n as f64)
                    .collect();
                let expected =
                    (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64);
                let got = window.estimate(EdgeIdx(edge)).map(|(v, _)| v);
                match (expected, got) {
                    (Some(e), Some(g)) => {
                        worst = worst.max((g - e).abs() / e.abs().max(f64::MIN_POSITIVE));
                        compared += 1;
                    }
                    (None, None) => {}
                    (e, g) => panic!("edge {edge} at {now}: expected {e:?}, got {g:?}"),
                }
            }
        }
        now += 1;
    }
    (worst, compared)
}
