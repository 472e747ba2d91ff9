use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{EdgeIdx, NodeIdx, RoadNetwork};

/// Two path lengths closer than this (seconds) are treated as equal.
pub const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub edges: Vec<EdgeIdx>,
    pub total_time: f64,
}

impl Route {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn contains(&self, e: EdgeIdx) -> bool {
        self.edges.contains(&e)
    }

    pub fn is_connected(&self, net: &RoadNetwork) -> bool {
        self.edges
            .windows(2)
            .all(|w| net.target(w[0]) == net.source(w[1]))
    }

    pub fn is_simple(&self) -> bool {
        let mut seen = self.edges.clone();
        seen.sort_unstable();
        seen.windows(2).all(|w| w[0] != w[1])
    }

    pub fn edge_ids<'a>(&self, net: &'a RoadNetwork) -> Vec<&'a str> {
        self.edges
            .iter()
            .map(|&e| net.edge(e).id.as_str())
            .collect()
    }
}

/// Set of edges excluded from a search.
#[derive(Debug, Clone)]
pub struct EdgeMask(Vec<bool>);

impl EdgeMask {
    pub fn empty(net: &RoadNetwork) -> Self {
        Self(vec![false; net.edge_count()])
    }

    pub fn from_edges(net: &RoadNetwork, edges: impl IntoIterator<Item = EdgeIdx>) -> Self {
        let mut mask = Self::empty(net);
        for e in edges {
            mask.ban(e);
        }
        mask
    }

    pub fn ban(&mut self, e: EdgeIdx) {
        self.0[e.0] = true;
    }

    pub fn allow(&mut self, e: EdgeIdx) {
        self.0[e.0] = false;
    }

    pub fn is_banned(&self, e: EdgeIdx) -> bool {
        self.0[e.0]
    }
}

#[derive(Clone, Copy)]
struct Frontier {
    dist: f64,
    rank: u32,
    node: NodeIdx,
}

impl PartialEq for Frontier {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    // Reversed: BinaryHeap is a max-heap and we pop the closest, lowest-ranked node.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.rank.cmp(&self.rank))
    }
}

/// Single-source shortest path tree with deterministic tie-breaking.
///
/// Nodes settle in (distance, id) order. When two predecessors reach a node
/// within [`TIE_EPS`], the predecessor with the lexicographically smaller id
/// wins; parallel edges fall back to the smaller edge id.
pub(crate) struct PathTree {
    pub dist: Vec<f64>,
    pub pred: Vec<Option<EdgeIdx>>,
}

impl PathTree {
    pub fn build(
        net: &RoadNetwork,
        times: &[f64],
        source: NodeIdx,
        banned: Option<&EdgeMask>,
    ) -> Self {
        let n = net.node_count();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred: Vec<Option<EdgeIdx>> = vec![None; n];
        let mut settled = vec![false; n];
        let mut heap = BinaryHeap::new();
        dist[source.0] = 0.0;
        heap.push(Frontier {
            dist: 0.0,
            rank: net.node_rank(source),
            node: source,
        });

        while let Some(Frontier { node: u, .. }) = heap.pop() {
            if settled[u.0] {
                continue;
            }
            settled[u.0] = true;
            for &e in net.out_edges(u) {
                if banned.is_some_and(|m| m.is_banned(e)) {
                    continue;
                }
                let w = net.target(e);
                if settled[w.0] {
                    continue;
                }
                let nd = dist[u.0] + times[e.0];
                let better = if nd < dist[w.0] - TIE_EPS {
                    true
                } else if (nd - dist[w.0]).abs() <= TIE_EPS {
                    let current = pred[w.0].expect("finite distance has a predecessor");
                    let cur_from = net.source(current);
                    (net.node_rank(u), net.edge_rank(e))
                        < (net.node_rank(cur_from), net.edge_rank(current))
                } else {
                    false
                };
                if better {
                    dist[w.0] = nd;
                    pred[w.0] = Some(e);
                    heap.push(Frontier {
                        dist: nd,
                        rank: net.node_rank(w),
                        node: w,
                    });
                }
            }
        }
        Self { dist, pred }
    }

    pub fn path_to(&self, net: &RoadNetwork, target: NodeIdx) -> Option<Vec<EdgeIdx>> {
        if !self.dist[target.0].is_finite() {
            return None;
        }
        let mut edges = Vec::new();
        let mut at = target;
        while let Some(e) = self.pred[at.0] {
            edges.push(e);
            at = net.source(e);
        }
        edges.reverse();
        Some(edges)
    }
}

fn sum_times(times: &[f64], edges: &[EdgeIdx]) -> f64 {
    edges.iter().map(|e| times[e.0]).sum()
}

/// Fastest route between two nodes under the given per-edge times.
/// Returns `None` when `to` is unreachable.
pub fn shortest_path(
    net: &RoadNetwork,
    times: &[f64],
    from: NodeIdx,
    to: NodeIdx,
) -> Option<Route> {
    shortest_path_inner(net, times, from, to, None)
}

pub fn shortest_path_avoiding(
    net: &RoadNetwork,
    times: &[f64],
    from: NodeIdx,
    to: NodeIdx,
    banned: &EdgeMask,
) -> Option<Route> {
    shortest_path_inner(net, times, from, to, Some(banned))
}

fn shortest_path_inner(
    net: &RoadNetwork,
    times: &[f64],
    from: NodeIdx,
    to: NodeIdx,
    banned: Option<&EdgeMask>,
) -> Option<Route> {
    debug_assert_eq!(times.len(), net.edge_count());
    let tree = PathTree::build(net, times, from, banned);
    let edges = tree.path_to(net, to)?;
    Some(Route {
        total_time: sum_times(times, &edges),
        edges,
    })
}

/// Route that starts with `origin`, ends with `destination` and never uses an
/// edge in `banned` or the origin edge twice.
pub fn route_between_edges(
    net: &RoadNetwork,
    times: &[f64],
    origin: EdgeIdx,
    destination: EdgeIdx,
    banned: Option<&EdgeMask>,
) -> Option<Route> {
    if origin == destination {
        return Some(Route {
            edges: vec![origin],
            total_time: times[origin.0],
        });
    }
    let mut mask = banned.cloned().unwrap_or_else(|| EdgeMask::empty(net));
    mask.ban(origin);
    mask.ban(destination);
    let tree = PathTree::build(net, times, net.target(origin), Some(&mask));
    let middle = tree.path_to(net, net.source(destination))?;
    let mut edges = Vec::with_capacity(middle.len() + 2);
    edges.push(origin);
    edges.extend(middle);
    edges.push(destination);
    Some(Route {
        total_time: sum_times(times, &edges),
        edges,
    })
}
