//! Road network graph: nodes, directed edges with physical attributes, and the
//! adjacency used by routing, centrality and the mobility simulation.

mod centrality;
#[cfg(test)]
pub(crate) mod fixtures;
mod grid;
mod io;
mod routing;
mod targets;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use centrality::{betweenness_centrality, CentralityScores};
pub use grid::{generate_grid, Arterial, ArterialAxis, GridSpec};
pub use io::{load_network, parse_network, save_network, write_network};
pub use routing::{
    route_between_edges, shortest_path, shortest_path_avoiding, EdgeMask, Route, TIE_EPS,
};
pub use targets::{
    select_targets, RejectReason, RejectedCandidate, TargetCandidate, TargetSelection,
    TargetSelectionConfig,
};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: parse error at line {line}, column {column}: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("duplicate edge id `{0}`")]
    DuplicateEdge(String),
    #[error("edge `{edge}` references undeclared node `{node}`")]
    DanglingNode { edge: String, node: String },
    #[error("edge `{edge}`: {field} must be positive and finite, got {value}")]
    NonPositive {
        edge: String,
        field: &'static str,
        value: f64,
    },
    #[error("edge `{0}`: lanes must be at least 1")]
    NoLanes(String),
    #[error("node `{0}`: coordinates must be finite")]
    BadCoordinate(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("unknown edge `{0}`")]
    UnknownEdge(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid target selection parameters: {0}")]
    InvalidSelection(String),
    #[error("edge time table has {got} entries, network has {expected} edges")]
    TimeTableSize { expected: usize, got: usize },
    #[error("edge `{edge}`: travel time must be positive and finite, got {value}")]
    BadTime { edge: String, value: f64 },
}

/// Dense index of a node inside a [`RoadNetwork`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeIdx(pub usize);

/// Dense index of an edge inside a [`RoadNetwork`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeIdx(pub usize);

impl NodeIdx {
    pub fn index(self) -> usize {
        self.0
    }
}

impl EdgeIdx {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

/// A directed road. Lengths are meters, speeds meters per second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length: f64,
    pub lanes: u32,
    pub speed_limit: f64,
}

impl Edge {
    pub fn free_flow_time(&self) -> f64 {
        self.length / self.speed_limit
    }

    /// Number of vehicles that physically fit on one lane.
    pub fn lane_capacity(&self, vehicle_length: f64, min_gap: f64) -> u32 {
        (self.length / (vehicle_length + min_gap)).floor().max(0.0) as u32
    }
}

/// Serialized form of a network file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDocument {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

/// Validated road network. Node and edge order is the order of declaration;
/// all derived lookup structures are rebuilt from the two lists.
#[derive(Clone)]
pub struct RoadNetwork {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    endpoints: Vec<(NodeIdx, NodeIdx)>,
    out_edges: Vec<Vec<EdgeIdx>>,
    in_edges: Vec<Vec<EdgeIdx>>,
    node_lookup: HashMap<String, NodeIdx>,
    edge_lookup: HashMap<String, EdgeIdx>,
    node_rank: Vec<u32>,
    edge_rank: Vec<u32>,
}

impl fmt::Debug for RoadNetwork {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RoadNetwork")
            .field("nodes", &self.nodes.len())
            .field("edges", &self.edges.len())
            .finish()
    }
}

impl PartialEq for RoadNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.edges == other.edges
    }
}

impl RoadNetwork {
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self, NetworkError> {
        let mut node_lookup = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if !node.x.is_finite() || !node.y.is_finite() {
                return Err(NetworkError::BadCoordinate(node.id.clone()));
            }
            if node_lookup.insert(node.id.clone(), NodeIdx(i)).is_some() {
                return Err(NetworkError::DuplicateNode(node.id.clone()));
            }
        }

        let mut edge_lookup = HashMap::with_capacity(edges.len());
        let mut endpoints = Vec::with_capacity(edges.len());
        let mut out_edges = vec![Vec::new(); nodes.len()];
        let mut in_edges = vec![Vec::new(); nodes.len()];
        for (i, edge) in edges.iter().enumerate() {
            if edge_lookup.insert(edge.id.clone(), EdgeIdx(i)).is_some() {
                return Err(NetworkError::DuplicateEdge(edge.id.clone()));
            }
            let resolve = |node: &str| {
                node_lookup
                    .get(node)
                    .copied()
                    .ok_or_else(|| NetworkError::DanglingNode {
                        edge: edge.id.clone(),
                        node: node.to_string(),
                    })
            };
            let from = resolve(&edge.from)?;
            let to = resolve(&edge.to)?;
            for (field, value) in [("length", edge.length), ("speed_limit", edge.speed_limit)] {
                if !(value.is_finite() && value > 0.0) {
                    return Err(NetworkError::NonPositive {
                        edge: edge.id.clone(),
                        field,
                        value,
                    });
                }
            }
            if edge.lanes == 0 {
                return Err(NetworkError::NoLanes(edge.id.clone()));
            }
            endpoints.push((from, to));
            out_edges[from.0].push(EdgeIdx(i));
            in_edges[to.0].push(EdgeIdx(i));
        }

        let node_rank = lexicographic_ranks(nodes.iter().map(|n| n.id.as_str()));
        let edge_rank = lexicographic_ranks(edges.iter().map(|e| e.id.as_str()));

        Ok(Self {
            nodes,
            edges,
            endpoints,
            out_edges,
            in_edges,
            node_lookup,
            edge_lookup,
            node_rank,
            edge_rank,
        })
    }

    pub fn from_document(doc: NetworkDocument) -> Result<Self, NetworkError> {
        Self::new(doc.nodes, doc.edges)
    }

    pub fn to_document(&self) -> NetworkDocument {
        NetworkDocument {
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, n: NodeIdx) -> &Node {
        &self.nodes[n.0]
    }

    pub fn edge(&self, e: EdgeIdx) -> &Edge {
        &self.edges[e.0]
    }

    pub fn node_idx(&self, id: &str) -> Option<NodeIdx> {
        self.node_lookup.get(id).copied()
    }

    pub fn edge_idx(&self, id: &str) -> Option<EdgeIdx> {
        self.edge_lookup.get(id).copied()
    }

    pub fn require_node(&self, id: &str) -> Result<NodeIdx, NetworkError> {
        self.node_idx(id)
            .ok_or_else(|| NetworkError::UnknownNode(id.to_string()))
    }

    pub fn require_edge(&self, id: &str) -> Result<EdgeIdx, NetworkError> {
        self.edge_idx(id)
            .ok_or_else(|| NetworkError::UnknownEdge(id.to_string()))
    }

    pub fn source(&self, e: EdgeIdx) -> NodeIdx {
        self.endpoints[e.0].0
    }

    pub fn target(&self, e: EdgeIdx) -> NodeIdx {
        self.endpoints[e.0].1
    }

    pub fn out_edges(&self, n: NodeIdx) -> &[EdgeIdx] {
        &self.out_edges[n.0]
    }

    pub fn in_edges(&self, n: NodeIdx) -> &[EdgeIdx] {
        &self.in_edges[n.0]
    }

    /// Position of the node in lexicographic id order; used for tie-breaking.
    pub fn node_rank(&self, n: NodeIdx) -> u32 {
        self.node_rank[n.0]
    }

    pub fn edge_rank(&self, e: EdgeIdx) -> u32 {
        self.edge_rank[e.0]
    }

    pub fn node_indices(&self) -> impl Iterator<Item = NodeIdx> + '_ {
        (0..self.nodes.len()).map(NodeIdx)
    }

    pub fn edge_indices(&self) -> impl Iterator<Item = EdgeIdx> + '_ {
        (0..self.edges.len()).map(EdgeIdx)
    }

    /// Nodes sorted by id.
    pub fn nodes_by_id(&self) -> Vec<NodeIdx> {
        let mut order: Vec<NodeIdx> = self.node_indices().collect();
        order.sort_by_key(|&n| self.node_rank(n));
        order
    }

    /// Edges sorted by id.
    pub fn edges_by_id(&self) -> Vec<EdgeIdx> {
        let mut order: Vec<EdgeIdx> = self.edge_indices().collect();
        order.sort_by_key(|&e| self.edge_rank(e));
        order
    }

    pub fn free_flow_times(&self) -> Vec<f64> {
        self.edges.iter().map(Edge::free_flow_time).collect()
    }

    /// Converts an id-keyed time map into the dense table used by routing.
    pub fn times_from_map(&self, times: &HashMap<String, f64>) -> Result<Vec<f64>, NetworkError> {
        let mut dense = vec![f64::NAN; self.edges.len()];
        for (id, &t) in times {
            let e = self.require_edge(id)?;
            dense[e.0] = t;
        }
        self.check_times(&dense)?;
        Ok(dense)
    }

    pub fn check_times(&self, times: &[f64]) -> Result<(), NetworkError> {
        if times.len() != self.edges.len() {
            return Err(NetworkError::TimeTableSize {
                expected: self.edges.len(),
                got: times.len(),
            });
        }
        for (edge, &t) in self.edges.iter().zip(times) {
            if !(t.is_finite() && t > 0.0) {
                return Err(NetworkError::BadTime {
                    edge: edge.id.clone(),
                    value: t,
                });
            }
        }
        Ok(())
    }
}

fn lexicographic_ranks<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<u32> {
    let ids: Vec<&str> = ids.collect();
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(ids[b]));
    let mut rank = vec![0u32; ids.len()];
    for (r, i) in order.into_iter().enumerate() {
        rank[i] = r as u32;
    }
    rank
}
