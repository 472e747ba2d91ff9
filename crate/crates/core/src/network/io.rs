use std::fs;
use std::io::Write;
use std::path::Path;

use super::{NetworkDocument, NetworkError, RoadNetwork};

pub fn load_network(path: impl AsRef<Path>) -> Result<RoadNetwork, NetworkError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| NetworkError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_network(&text, &path.display().to_string())
}

/// Parses a network document. `origin` names the source in error messages.
pub fn parse_network(text: &str, origin: &str) -> Result<RoadNetwork, NetworkError> {
    let doc: NetworkDocument = serde_json::from_str(text).map_err(|e| NetworkError::Parse {
        origin: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    RoadNetwork::from_document(doc)
}

pub fn write_network(net: &RoadNetwork, mut out: impl Write) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut out, &net.to_document())?;
    out.write_all(b"\n")
}

pub fn save_network(net: &RoadNetwork, path: impl AsRef<Path>) -> Result<(), NetworkError> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|source| NetworkError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_network(net, std::io::BufWriter::new(file)).map_err(|source| NetworkError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::generate_grid;

    #[test]
    fn parse_minimal_document() {
        let text = r#"{
            "nodes": [{"id": "a", "x": 0, "y": 0}, {"id": "b", "x": 100, "y": 0}],
            "edges": [{"id": "ab", "from": "a", "to": "b", "length": 100, "lanes": 1, "speed_limit": 10}]
        }"#;
        let net = parse_network(text, "inline").unwrap();
        assert_eq!(net.edges()[0].free_flow_time(), 10.0);
    }

    #[test]
    fn missing_field_reports_location() {
        let text = "{\n \"nodes\": [{\"id\": \"a\", \"x\": 0}],\n \"edges\": []\n}";
        match parse_network(text, "net.json") {
            Err(NetworkError::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("`y`"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dangling_node_in_file() {
        let text = r#"{"nodes": [{"id": "a", "x": 0, "y": 0}],
            "edges": [{"id": "az", "from": "a", "to": "Z", "length": 1, "lanes": 1, "speed_limit": 1}]}"#;
        assert!(matches!(
            parse_network(text, "x"),
            Err(NetworkError::DanglingNode { .. })
        ));
    }

    #[test]
    fn grid_round_trips_through_file() {
        let net = generate_grid(4, 4, 200.0, 13.9, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.json");
        save_network(&net, &path).unwrap();
        let back = load_network(&path).unwrap();
        assert_eq!(net, back);
        for e in net.edge_indices() {
            assert_eq!(net.source(e), back.source(e));
            assert_eq!(net.target(e), back.target(e));
        }
        for n in net.node_indices() {
            assert_eq!(net.out_edges(n), back.out_edges(n));
            assert_eq!(net.in_edges(n), back.in_edges(n));
        }
    }
}
