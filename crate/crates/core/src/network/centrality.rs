//! Betweenness centrality over travel-time weighted shortest paths.
//!
//! Scores sum over all ordered source/target pairs. Unreachable pairs
//! contribute nothing. Path lengths within [`TIE_EPS`] of each other count as
//! equally short, so multiplicities survive floating point summation order.

use std::collections::BTreeMap;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use super::routing::TIE_EPS;
use super::{EdgeIdx, NodeIdx, RoadNetwork};

#[derive(Debug, Clone, PartialEq)]
pub struct CentralityScores {
    pub node_bc: Vec<f64>,
    pub edge_bc: Vec<f64>,
}

impl CentralityScores {
    pub fn node(&self, n: NodeIdx) -> f64 {
        self.node_bc[n.0]
    }

    pub fn edge(&self, e: EdgeIdx) -> f64 {
        self.edge_bc[e.0]
    }

    pub fn node_map(&self, net: &RoadNetwork) -> BTreeMap<String, f64> {
        net.node_indices()
            .map(|n| (net.node(n).id.clone(), self.node(n)))
            .collect()
    }

    pub fn edge_map(&self, net: &RoadNetwork) -> BTreeMap<String, f64> {
        net.edge_indices()
            .map(|e| (net.edge(e).id.clone(), self.edge(e)))
            .collect()
    }
}

// Sources processed per parallel batch; bounds the memory of per-source partials.
const SOURCE_BATCH: usize = 64;

pub fn betweenness_centrality(net: &RoadNetwork, times: &[f64]) -> CentralityScores {
    debug_assert_eq!(times.len(), net.edge_count());
    let mut node_bc = vec![0.0; net.node_count()];
    let mut edge_bc = vec![0.0; net.edge_count()];
    let sources = net.nodes_by_id();
    for batch in sources.chunks(SOURCE_BATCH) {
        let partials: Vec<(Vec<f64>, Vec<f64>)> = batch
            .par_iter()
            .map(|&s| single_source_dependencies(net, times, s))
            .collect();
        // Sum in node-id order so the result does not depend on scheduling.
        for (node_part, edge_part) in partials {
            for (acc, x) in node_bc.iter_mut().zip(node_part) {
                *acc += x;
            }
            for (acc, x) in edge_bc.iter_mut().zip(edge_part) {
                *acc += x;
            }
        }
    }
    CentralityScores { node_bc, edge_bc }
}

#[derive(Clone, Copy)]
struct Entry {
    dist: f64,
    node: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// Brandes' accumulation for one source.
fn single_source_dependencies(
    net: &RoadNetwork,
    times: &[f64],
    source: NodeIdx,
) -> (Vec<f64>, Vec<f64>) {
    let n = net.node_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut sigma = vec![0.0f64; n];
    let mut preds: Vec<Vec<EdgeIdx>> = vec![Vec::new(); n];
    let mut settled = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut heap = BinaryHeap::new();

    dist[source.0] = 0.0;
    sigma[source.0] = 1.0;
    heap.push(Entry {
        dist: 0.0,
        node: source.0,
    });
    while let Some(Entry { node: u, .. }) = heap.pop() {
        if settled[u] {
            continue;
        }
        settled[u] = true;
        order.push(u);
        for &e in net.out_edges(NodeIdx(u)) {
            let w = net.target(e).0;
            if settled[w] {
                continue;
            }
            let nd = dist[u] + times[e.0];
            if nd < dist[w] - TIE_EPS {
                dist[w] = nd;
                sigma[w] = sigma[u];
                preds[w].clear();
                preds[w].push(e);
                heap.push(Entry { dist: nd, node: w });
            } else if (nd - dist[w]).abs() <= TIE_EPS {
                sigma[w] += sigma[u];
                preds[w].push(e);
            }
        }
    }

    let mut delta = vec![0.0f64; n];
    let mut node_part = vec![0.0f64; n];
    let mut edge_part = vec![0.0f64; net.edge_count()];
    for &w in order.iter().rev() {
        for &e in &preds[w] {
            let v = net.source(e).0;
            let c = sigma[v] / sigma[w] * (1.0 + delta[w]);
            edge_part[e.0] += c;
            delta[v] += c;
        }
        if w != source.0 {
            node_part[w] += delta[w];
        }
    }
    (node_part, edge_part)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::net_from;

    #[test]
    fn directed_path_interior_node() {
        let net = net_from(&[("AB", "A", "B"), ("BC", "B", "C")]);
        let s = betweenness_centrality(&net, &[1.0, 1.0]);
        let m = s.node_map(&net);
        assert_eq!((m["A"], m["B"], m["C"]), (0.0, 1.0, 0.0));
        let em = s.edge_map(&net);
        // (A,B), (A,C) use AB; (B,C), (A,C) use BC
        assert_eq!((em["AB"], em["BC"]), (2.0, 2.0));
    }

    #[test]
    fn path_graph_closed_form() {
        let n = 7;
        let names: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
        let edges: Vec<(String, String, String)> = (0..n - 1)
            .map(|i| (format!("e{i}"), names[i].clone(), names[i + 1].clone()))
            .collect();
        let refs: Vec<(&str, &str, &str)> = edges
            .iter()
            .map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str()))
            .collect();
        let net = net_from(&refs);
        let s = betweenness_centrality(&net, &vec![1.0; n - 1]);
        for k in 1..=n {
            let v = net.node_idx(&names[k - 1]).unwrap();
            assert_eq!(s.node(v), ((k - 1) * (n - k)) as f64);
        }
    }

    #[test]
    fn star_center_carries_all_leaf_pairs() {
        let net = net_from(&[
            ("XA", "X", "A"),
            ("AX", "A", "X"),
            ("XB", "X", "B"),
            ("BX", "B", "X"),
            ("XC", "X", "C"),
            ("CX", "C", "X"),
        ]);
        let s = betweenness_centrality(&net, &[1.0; 6]);
        assert_eq!(s.node_map(&net)["X"], 6.0);
        assert_eq!(s.node_map(&net)["A"], 0.0);
    }

    #[test]
    fn ties_split_credit() {
        let net = net_from(&[
            ("AB", "A", "B"),
            ("BD", "B", "D"),
            ("AC", "A", "C"),
            ("CD", "C", "D"),
        ]);
        let s = betweenness_centrality(&net, &[1.0, 2.0, 2.0, 1.0]);
        let m = s.node_map(&net);
        assert_eq!((m["B"], m["C"]), (0.5, 0.5));
    }
}
