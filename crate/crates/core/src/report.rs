//! The per-second user report, the only channel from vehicles to the server.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::network::{EdgeIdx, NetworkError, RoadNetwork};

/// One submission `{id, road, speed, t}`. Benign and Sybil reports share
/// this type and are indistinguishable to the server.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub id: Arc<str>,
    pub edge: EdgeIdx,
    pub speed: f64,
    pub t: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportRow {
    id: String,
    edge_id: String,
    speed: f64,
    t: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportIoError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Writes reports as CSV `id,edge_id,speed,t`.
pub fn write_reports_csv(
    net: &RoadNetwork,
    reports: &[Report],
    out: impl Write,
) -> Result<(), ReportIoError> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(ReportRow {
            id: r.id.to_string(),
            edge_id: net.edge(r.edge).id.clone(),
            speed: r.speed,
            t: r.t,
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_reports_csv(net: &RoadNetwork, input: impl Read) -> Result<Vec<Report>, ReportIoError> {
    let mut r = csv::Reader::from_reader(input);
    let mut reports = Vec::new();
    for row in r.deserialize() {
        let row: ReportRow = row?;
        reports.push(Report {
            id: Arc::from(row.id),
            edge: net.require_edge(&row.edge_id)?,
            speed: row.speed,
            t: row.t,
        });
    }
    Ok(reports)
}
