//! Attack target ranking: edges ordered by betweenness, filtered to those
//! whose removal still leaves a reasonable detour for the traffic using them.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::routing::{EdgeMask, PathTree};
use super::{CentralityScores, EdgeIdx, NetworkError, NodeIdx, RoadNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSelectionConfig {
    pub k: usize,
    pub max_detour_factor: f64,
    pub od_sample_size: usize,
}

impl Default for TargetSelectionConfig {
    fn default() -> Self {
        Self {
            k: 3,
            max_detour_factor: 3.0,
            od_sample_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetCandidate {
    pub edge: EdgeIdx,
    pub edge_bc: f64,
    pub median_detour: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RejectReason {
    /// Some sampled origin/destination pair has no path without the edge.
    Unreachable,
    /// Median detour factor above the configured maximum.
    Detour(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedCandidate {
    pub edge: EdgeIdx,
    pub edge_bc: f64,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TargetSelection {
    pub selected: Vec<TargetCandidate>,
    pub rejected: Vec<RejectedCandidate>,
}

impl TargetSelection {
    pub fn edges(&self) -> Vec<EdgeIdx> {
        self.selected.iter().map(|c| c.edge).collect()
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Evenly spaced deterministic sample of `n` indices out of `len`.
fn sample_indices(len: usize, n: usize) -> Vec<usize> {
    if len <= n {
        (0..len).collect()
    } else {
        (0..n).map(|i| i * len / n).collect()
    }
}

/// Relative tolerance under which two scores count as tied. Symmetric edges
/// get mathematically equal scores that differ in the last bits depending on
/// summation order.
const SCORE_TIE_REL: f64 = 1e-9;

/// Sorts by descending score. Runs of scores within [`SCORE_TIE_REL`] of the
/// run's first (highest) score are ordered by edge id.
fn rank_by_score(net: &RoadNetwork, scores: &CentralityScores, edges: &mut [EdgeIdx]) {
    edges.sort_by(|&a, &b| scores.edge(b).total_cmp(&scores.edge(a)));
    let mut start = 0;
    while start < edges.len() {
        let head = scores.edge(edges[start]);
        let tol = SCORE_TIE_REL * head.abs().max(1.0);
        let mut end = start + 1;
        while end < edges.len() && head - scores.edge(edges[end]) <= tol {
            end += 1;
        }
        edges[start..end].sort_by_key(|&e| net.edge_rank(e));
        start = end;
    }
}

/// Ranks edges by betweenness and keeps the first `k` that have a viable
/// alternative. Candidates with zero betweenness carry no shortest paths and
/// are never proposed.
pub fn select_targets(
    net: &RoadNetwork,
    times: &[f64],
    scores: &CentralityScores,
    config: &TargetSelectionConfig,
) -> Result<TargetSelection, NetworkError> {
    if config.k == 0 {
        return Err(NetworkError::InvalidSelection(
            "k must be at least 1".into(),
        ));
    }
    if config.max_detour_factor.is_nan() || config.max_detour_factor <= 1.0 {
        return Err(NetworkError::InvalidSelection(format!(
            "max_detour_factor must exceed 1, got {}",
            config.max_detour_factor
        )));
    }
    if config.od_sample_size == 0 {
        return Err(NetworkError::InvalidSelection(
            "od_sample_size must be at least 1".into(),
        ));
    }
    net.check_times(times)?;

    let mut candidates: Vec<EdgeIdx> = net
        .edge_indices()
        .filter(|&e| scores.edge(e) > 0.0)
        .collect();
    rank_by_score(net, scores, &mut candidates);

    let sources = net.nodes_by_id();
    let trees: Vec<PathTree> = sources
        .iter()
        .map(|&s| PathTree::build(net, times, s, None))
        .collect();

    let mut selection = TargetSelection::default();
    for edge in candidates {
        if selection.selected.len() == config.k {
            break;
        }
        let users = od_pairs_using(net, &sources, &trees, edge);
        let mask = EdgeMask::from_edges(net, [edge]);
        let mut factors = Vec::new();
        let mut unreachable = false;
        let mut detour_trees: HashMap<usize, PathTree> = HashMap::new();
        for i in sample_indices(users.len(), config.od_sample_size) {
            let (si, t) = users[i];
            let original = trees[si].dist[t.0];
            let alt = detour_trees
                .entry(si)
                .or_insert_with(|| PathTree::build(net, times, sources[si], Some(&mask)))
                .dist[t.0];
            if !alt.is_finite() {
                unreachable = true;
                break;
            }
            factors.push(alt / original);
        }
        let edge_bc = scores.edge(edge);
        if unreachable {
            selection.rejected.push(RejectedCandidate {
                edge,
                edge_bc,
                reason: RejectReason::Unreachable,
            });
            continue;
        }
        let median_detour = median(&mut factors);
        if median_detour > config.max_detour_factor {
            selection.rejected.push(RejectedCandidate {
                edge,
                edge_bc,
                reason: RejectReason::Detour(median_detour),
            });
        } else {
            selection.selected.push(TargetCandidate {
                edge,
                edge_bc,
                median_detour,
            });
        }
    }
    Ok(selection)
}

/// Ordered (source position, target) pairs whose chosen shortest path uses `edge`.
fn od_pairs_using(
    net: &RoadNetwork,
    sources: &[NodeIdx],
    trees: &[PathTree],
    edge: EdgeIdx,
) -> Vec<(usize, NodeIdx)> {
    let mut pairs = Vec::new();
    for (si, tree) in trees.iter().enumerate() {
        for &t in sources {
            if t == sources[si] || !tree.dist[t.0].is_finite() {
                continue;
            }
            let mut at = t;
            while let Some(e) = tree.pred[at.0] {
                if e == edge {
                    pairs.push((si, t));
                    break;
                }
                at = net.source(e);
            }
        }
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::net_from;
    use crate::network::{betweenness_centrality, generate_grid};

    #[test]
    fn near_equal_scores_rank_by_id() {
        let net = net_from(&[("a", "X", "Y"), ("b", "Y", "Z"), ("c", "Z", "X")]);
        let scores = CentralityScores {
            node_bc: vec![0.0; 3],
            edge_bc: vec![19.5 - 1e-14, 19.5, 3.0],
        };
        let mut edges: Vec<EdgeIdx> = net.edge_indices().collect();
        edges.reverse();
        rank_by_score(&net, &scores, &mut edges);
        let ids: Vec<&str> = edges.iter().map(|&e| net.edge(e).id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn bridge_is_excluded_and_next_edge_returned() {
        // Two bidirectional triangles joined by the single bridge C->D.
        let net = net_from(&[
            ("AB", "A", "B"),
            ("BA", "B", "A"),
            ("BC", "B", "C"),
            ("CB", "C", "B"),
            ("CA", "C", "A"),
            ("AC", "A", "C"),
            ("CD", "C", "D"),
            ("DE", "D", "E"),
            ("ED", "E", "D"),
            ("EF", "E", "F"),
            ("FE", "F", "E"),
            ("FD", "F", "D"),
            ("DF", "D", "F"),
        ]);
        let times = vec![1.0; net.edge_count()];
        let scores = betweenness_centrality(&net, &times);
        let cd = net.edge_idx("CD").unwrap();
        assert!(net
            .edge_indices()
            .all(|e| scores.edge(e) < scores.edge(cd) || e == cd));
        let cfg = TargetSelectionConfig {
            k: 1,
            max_detour_factor: 2.0,
            od_sample_size: 64,
        };
        let sel = select_targets(&net, &times, &scores, &cfg).unwrap();
        assert_eq!(sel.rejected[0].edge, cd);
        assert_eq!(sel.rejected[0].reason, RejectReason::Unreachable);
        assert_eq!(sel.selected.len(), 1);
        assert_ne!(sel.selected[0].edge, cd);
    }

    #[test]
    fn all_filtered_gives_empty_list() {
        let net = net_from(&[("AB", "A", "B"), ("BC", "B", "C")]);
        let times = vec![1.0; 2];
        let scores = betweenness_centrality(&net, &times);
        let sel = select_targets(&net, &times, &scores, &TargetSelectionConfig::default()).unwrap();
        assert!(sel.selected.is_empty());
        assert_eq!(sel.rejected.len(), 2);
    }

    #[test]
    fn k_larger_than_survivors_returns_shorter_list() {
        let net = generate_grid(3, 3, 100.0, 10.0, 1).unwrap();
        let times = net.free_flow_times();
        let scores = betweenness_centrality(&net, &times);
        let cfg = TargetSelectionConfig {
            k: 1000,
            ..Default::default()
        };
        let sel = select_targets(&net, &times, &scores, &cfg).unwrap();
        assert!(sel.selected.len() < 1000);
        assert_eq!(
            sel.selected.len() + sel.rejected.len(),
            scores.edge_bc.iter().filter(|&&b| b > 0.0).count()
        );
    }

    #[test]
    fn invalid_parameters() {
        let net = generate_grid(2, 2, 100.0, 10.0, 1).unwrap();
        let times = net.free_flow_times();
        let scores = betweenness_centrality(&net, &times);
        let bad_k = TargetSelectionConfig {
            k: 0,
            ..Default::default()
        };
        assert!(select_targets(&net, &times, &scores, &bad_k).is_err());
        let bad_factor = TargetSelectionConfig {
            max_detour_factor: 1.0,
            ..Default::default()
        };
        assert!(select_targets(&net, &times, &scores, &bad_factor).is_err());
    }

    #[test]
    fn sampling_is_even_and_bounded() {
        assert_eq!(sample_indices(3, 64), vec![0, 1, 2]);
        let s = sample_indices(128, 64);
        assert_eq!(s.len(), 64);
        assert_eq!(s[1], 2);
    }
}
