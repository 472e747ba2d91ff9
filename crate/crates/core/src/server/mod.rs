//! The navigation service: report ingestion, windowed speed estimates and
//! ETA-based rerouting of subscribed users.

mod window;

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::mobility::{Role, SimState, VehicleKey};
use crate::network::{
    shortest_path, shortest_path_avoiding, EdgeIdx, EdgeMask, NodeIdx, RoadNetwork, Route,
};
use crate::report::Report;

pub use window::{SpeedWindow, WindowConfig, WindowStats};

/// Lowest speed an estimate may take, keeping travel times finite.
pub const SPEED_FLOOR: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("invalid window config: {0}")]
    InvalidWindow(String),
    #[error("estimate table covers {got} edges, network has {expected}")]
    TableSize { expected: usize, got: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Speed estimate per edge, as published at one slide.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedEstimateTable {
    pub slide_time: u64,
    pub speeds: Vec<f64>,
    pub times: Vec<f64>,
    pub sample_counts: Vec<u64>,
}

impl SpeedEstimateTable {
    /// Every edge at its speed limit: the table before any data arrives.
    pub fn free_flow(net: &RoadNetwork) -> Self {
        let speeds: Vec<f64> = net
            .edges()
            .iter()
            .map(|e| e.speed_limit.max(SPEED_FLOOR))
            .collect();
        Self::from_speeds(net, 0, speeds, vec![0; net.edge_count()])
    }

    pub fn from_window(net: &RoadNetwork, window: &SpeedWindow) -> Self {
        let mut speeds = Vec::with_capacity(net.edge_count());
        let mut counts = Vec::with_capacity(net.edge_count());
        for e in net.edge_indices() {
            let (speed, count) = window.estimate(e).unwrap_or((net.edge(e).speed_limit, 0));
            speeds.push(speed.max(SPEED_FLOOR));
            counts.push(count);
        }
        Self::from_speeds(net, window.now(), speeds, counts)
    }

    fn from_speeds(
        net: &RoadNetwork,
        slide_time: u64,
        speeds: Vec<f64>,
        sample_counts: Vec<u64>,
    ) -> Self {
        let times = net
            .edges()
            .iter()
            .zip(&speeds)
            .map(|(e, s)| e.length / s)
            .collect();
        Self {
            slide_time,
            speeds,
            times,
            sample_counts,
        }
    }

    pub fn speed(&self, e: EdgeIdx) -> f64 {
        self.speeds[e.0]
    }

    pub fn time(&self, e: EdgeIdx) -> f64 {
        self.times[e.0]
    }

    /// Appends rows `slide_time,edge_id,estimate_mps,sample_count` for every
    /// edge in id order.
    pub fn dump_rows(&self, net: &RoadNetwork, rows: &mut Vec<EstimateRow>) {
        for e in net.edges_by_id() {
            rows.push(EstimateRow {
                slide_time: self.slide_time,
                edge_id: net.edge(e).id.clone(),
                estimate_mps: self.speeds[e.0],
                sample_count: self.sample_counts[e.0],
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRow {
    pub slide_time: u64,
    pub edge_id: String,
    pub estimate_mps: f64,
    pub sample_count: u64,
}

pub fn write_estimates_csv(rows: &[EstimateRow], out: impl Write) -> Result<(), ServerError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Fastest route between two nodes under the published estimates.
pub fn compute_eta(
    net: &RoadNetwork,
    table: &SpeedEstimateTable,
    from: NodeIdx,
    to: NodeIdx,
) -> Result<Option<Route>, ServerError> {
    if table.times.len() != net.edge_count() {
        return Err(ServerError::TableSize {
            expected: net.edge_count(),
            got: table.times.len(),
        });
    }
    Ok(shortest_path(net, &table.times, from, to))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RerouteOutcome {
    Unchanged,
    Changed,
    OnFinalEdge,
    NotAUser,
    Unreachable,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerouteSummary {
    pub considered: u64,
    pub changed: u64,
    pub unreachable: u64,
}

impl RerouteSummary {
    pub fn absorb(&mut self, other: RerouteSummary) {
        self.considered += other.considered;
        self.changed += other.changed;
        self.unreachable += other.unreachable;
    }
}

/// Recomputes the remainder of one user's route from the end of its current
/// edge. The current edge and everything already driven stay untouched and
/// are excluded from the new suffix so the route remains simple.
pub fn reroute_vehicle(
    sim: &mut SimState,
    table: &SpeedEstimateTable,
    key: VehicleKey,
) -> RerouteOutcome {
    let net = Arc::clone(sim.network());
    let v = sim.vehicle(key);
    if v.role != Role::NmcsUser || !v.is_active() {
        return RerouteOutcome::NotAUser;
    }
    if v.on_final_edge() {
        return RerouteOutcome::OnFinalEdge;
    }
    let destination = v.destination;
    let from = net.target(v.current_edge());
    let to = net.source(destination);
    let mut mask = EdgeMask::from_edges(&net, v.route[..=v.route_pos].iter().copied());
    mask.ban(destination);
    let middle = if from == to {
        Some(Vec::new())
    } else {
        shortest_path_avoiding(&net, &table.times, from, to, &mask).map(|r| r.edges)
    };
    let Some(mut suffix) = middle else {
        debug!(vehicle = %v.id, t = sim.now(), "no route to destination, keeping current route");
        return RerouteOutcome::Unreachable;
    };
    suffix.push(destination);
    if suffix[..] == v.route[v.route_pos + 1..] {
        return RerouteOutcome::Unchanged;
    }
    match sim.replace_route_suffix(key, suffix) {
        Ok(()) => RerouteOutcome::Changed,
        Err(err) => {
            debug!(%err, "rejected reroute");
            RerouteOutcome::Unreachable
        }
    }
}

/// Reroutes every active N-MCS user.
pub fn reroute_users(sim: &mut SimState, table: &SpeedEstimateTable) -> RerouteSummary {
    let mut summary = RerouteSummary::default();
    for key in sim.active_keys() {
        match reroute_vehicle(sim, table, key) {
            RerouteOutcome::Changed => {
                summary.considered += 1;
                summary.changed += 1;
            }
            RerouteOutcome::Unreachable => {
                summary.considered += 1;
                summary.unreachable += 1;
            }
            RerouteOutcome::Unchanged => summary.considered += 1,
            RerouteOutcome::OnFinalEdge | RerouteOutcome::NotAUser => {}
        }
    }
    summary
}

/// Window plus the most recently published estimate table.
pub struct NmcsServer {
    net: Arc<RoadNetwork>,
    window: SpeedWindow,
    table: SpeedEstimateTable,
    dump: Option<Vec<EstimateRow>>,
}

impl NmcsServer {
    pub fn new(net: Arc<RoadNetwork>, config: WindowConfig) -> Result<Self, ServerError> {
        let window = SpeedWindow::new(net.edge_count(), config)?;
        let table = SpeedEstimateTable::free_flow(&net);
        Ok(Self {
            net,
            window,
            table,
            dump: None,
        })
    }

    /// Keep every published table as dump rows.
    pub fn record_estimates(&mut self) {
        self.dump.get_or_insert_with(Vec::new);
    }

    pub fn config(&self) -> WindowConfig {
        self.window.config()
    }

    pub fn window(&self) -> &SpeedWindow {
        &self.window
    }

    pub fn table(&self) -> &SpeedEstimateTable {
        &self.table
    }

    pub fn estimate_rows(&self) -> &[EstimateRow] {
        self.dump.as_deref().unwrap_or(&[])
    }

    pub fn advance(&mut self, now: u64) {
        self.window.advance(now);
    }

    pub fn ingest(&mut self, report: &Report) -> bool {
        self.window.ingest(report)
    }

    pub fn ingest_all(&mut self, reports: &[Report]) {
        for r in reports {
            self.window.ingest(r);
        }
    }

    pub fn is_slide(&self, t: u64) -> bool {
        self.window.config().is_slide(t)
    }

    /// Evicts expired cells and publishes a fresh estimate table.
    pub fn refresh(&mut self) -> &SpeedEstimateTable {
        self.window.evict();
        self.table = SpeedEstimateTable::from_window(&self.net, &self.window);
        if let Some(rows) = self.dump.as_mut() {
            self.table.dump_rows(&self.net, rows);
        }
        &self.table
    }

    pub fn compute_eta(&self, from: NodeIdx, to: NodeIdx) -> Option<Route> {
        shortest_path(&self.net, &self.table.times, from, to)
    }

    pub fn reroute_users(&self, sim: &mut SimState) -> RerouteSummary {
        reroute_users(sim, &self.table)
    }

    pub fn reroute_vehicle(&self, sim: &mut SimState, key: VehicleKey) -> RerouteOutcome {
        reroute_vehicle(sim, &self.table, key)
    }
}
