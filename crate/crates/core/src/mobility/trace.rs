use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::network::{EdgeIdx, NetworkError, RoadNetwork};

/// Occupancy interval of one vehicle on one edge. `exit_time` stays `None`
/// while the vehicle is still on the edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub vehicle_id: Arc<str>,
    pub edge: EdgeIdx,
    pub entry_time: u64,
    pub exit_time: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    vehicle_id: String,
    edge_id: String,
    entry_time: u64,
    exit_time: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceIoError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// CSV `vehicle_id,edge_id,entry_time,exit_time`; open intervals leave the
/// last column empty.
pub fn write_trace_csv(
    net: &RoadNetwork,
    events: &[TraceEvent],
    out: impl Write,
) -> Result<(), TraceIoError> {
    let mut w = csv::Writer::from_writer(out);
    for ev in events {
        w.serialize(TraceRow {
            vehicle_id: ev.vehicle_id.to_string(),
            edge_id: net.edge(ev.edge).id.clone(),
            entry_time: ev.entry_time,
            exit_time: ev.exit_time,
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_trace_csv(
    net: &RoadNetwork,
    input: impl Read,
) -> Result<Vec<TraceEvent>, TraceIoError> {
    let mut r = csv::Reader::from_reader(input);
    let mut events = Vec::new();
    for row in r.deserialize() {
        let row: TraceRow = row?;
        events.push(TraceEvent {
            vehicle_id: Arc::from(row.vehicle_id),
            edge: net.require_edge(&row.edge_id)?,
            entry_time: row.entry_time,
            exit_time: row.exit_time,
        });
    }
    Ok(events)
}
