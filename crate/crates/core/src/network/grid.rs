use serde::{Deserialize, Serialize};

use super::{Edge, NetworkError, Node, RoadNetwork};

/// Synthetic Manhattan grid. Row 0 is the southern boundary (y = 0) and
/// column 0 the western one (x = 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub edge_length: f64,
    pub speed_limit: f64,
    pub lanes: u32,
    /// Faster, wider roads overriding the uniform attributes along one row or column.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub arterials: Vec<Arterial>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArterialAxis {
    Row,
    Column,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arterial {
    pub axis: ArterialAxis,
    pub index: usize,
    pub speed_limit: f64,
    pub lanes: u32,
}

impl GridSpec {
    pub fn build(&self) -> Result<RoadNetwork, NetworkError> {
        let mut net = generate_grid(
            self.rows,
            self.cols,
            self.edge_length,
            self.speed_limit,
            self.lanes,
        )?;
        if self.arterials.is_empty() {
            return Ok(net);
        }
        let mut doc = net.to_document();
        for arterial in &self.arterials {
            let bound = match arterial.axis {
                ArterialAxis::Row => self.rows,
                ArterialAxis::Column => self.cols,
            };
            if arterial.index >= bound {
                return Err(NetworkError::InvalidGrid(format!(
                    "arterial index {} out of range",
                    arterial.index
                )));
            }
            for edge in &mut doc.edges {
                let (r0, c0) = parse_grid_node(&edge.from);
                let (r1, c1) = parse_grid_node(&edge.to);
                let on_arterial = match arterial.axis {
                    ArterialAxis::Row => r0 == arterial.index && r1 == arterial.index,
                    ArterialAxis::Column => c0 == arterial.index && c1 == arterial.index,
                };
                if on_arterial {
                    edge.speed_limit = arterial.speed_limit;
                    edge.lanes = arterial.lanes;
                }
            }
        }
        net = RoadNetwork::from_document(doc)?;
        Ok(net)
    }
}

fn node_id(r: usize, c: usize, width: usize) -> String {
    format!("n{r:0width$}_{c:0width$}")
}

fn parse_grid_node(id: &str) -> (usize, usize) {
    let body = &id[1..];
    let (r, c) = body.split_once('_').expect("grid node id");
    (
        r.parse().expect("grid row"),
        c.parse().expect("grid column"),
    )
}

/// Bidirectional `rows × cols` grid with uniform edge attributes.
pub fn generate_grid(
    rows: usize,
    cols: usize,
    edge_length: f64,
    speed_limit: f64,
    lanes: u32,
) -> Result<RoadNetwork, NetworkError> {
    if rows < 2 || cols < 2 {
        return Err(NetworkError::InvalidGrid(format!(
            "need at least 2 rows and 2 columns, got {rows}x{cols}"
        )));
    }
    let width = (rows.max(cols) - 1).to_string().len();
    let mut nodes = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            nodes.push(Node {
                id: node_id(r, c, width),
                x: c as f64 * edge_length,
                y: r as f64 * edge_length,
            });
        }
    }

    let mut edges = Vec::with_capacity(2 * (rows * (cols - 1) + cols * (rows - 1)));
    let mut link = |a: String, b: String| {
        for (from, to) in [(a.clone(), b.clone()), (b, a)] {
            edges.push(Edge {
                id: format!("{from}-{to}"),
                from,
                to,
                length: edge_length,
                lanes,
                speed_limit,
            });
        }
    };
    for r in 0..rows {
        for c in 0..cols - 1 {
            link(node_id(r, c, width), node_id(r, c + 1, width));
        }
    }
    for c in 0..cols {
        for r in 0..rows - 1 {
            link(node_id(r, c, width), node_id(r + 1, c, width));
        }
    }
    RoadNetwork::new(nodes, edges)
}
