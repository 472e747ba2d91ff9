use super::{Edge, Node, RoadNetwork};

/// Network from `(edge_id, from, to)` triples; nodes are inferred. All edges
/// are 10 m long at 1 m/s so free-flow times equal 10 s.
pub(crate) fn net_from(edges: &[(&str, &str, &str)]) -> RoadNetwork {
    let mut ids: Vec<&str> = edges.iter().flat_map(|e| [e.1, e.2]).collect();
    ids.sort();
    ids.dedup();
    let nodes = ids
        .iter()
        .map(|id| Node {
            id: id.to_string(),
            x: 0.0,
            y: 0.0,
        })
        .collect();
    let edges = edges
        .iter()
        .map(|(id, from, to)| Edge {
            id: id.to_string(),
            from: from.to_string(),
            to: to.to_string(),
            length: 10.0,
            lanes: 1,
            speed_limit: 1.0,
        })
        .collect();
    RoadNetwork::new(nodes, edges).unwrap()
}
