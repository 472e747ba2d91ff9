use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::adversary::{AttackSpec, SybilSummary};
use crate::mobility::{read_trace_csv, write_trace_csv, Role, SimStats, TraceEvent};
use crate::network::{EdgeIdx, RoadNetwork};
use crate::server::{write_estimates_csv, EstimateRow, RerouteSummary, WindowStats};

pub const TRACE_FILE: &str = "trace.csv";
pub const RUN_FILE: &str = "run.json";
pub const ESTIMATES_FILE: &str = "estimates.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleRecord {
    pub id: Arc<str>,
    pub role: Role,
    pub depart: u64,
    pub inserted_at: Option<u64>,
    pub arrived_at: Option<u64>,
    /// Edges actually entered, in order.
    pub route_taken: Vec<EdgeIdx>,
}

impl VehicleRecord {
    pub fn finished(&self) -> bool {
        self.arrived_at.is_some()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub sim: SimStats,
    pub window: WindowStats,
    pub reroutes: RerouteSummary,
    pub sybil_reports_injected: u64,
    pub end_time: u64,
    pub unfinished: u64,
    /// Active N-MCS users at each second, starting at t = 0.
    pub active_users: Vec<u32>,
}

impl RunStats {
    /// Mean number of active N-MCS users over `[from, to]`.
    pub fn mean_active_users(&self, from: u64, to: u64) -> f64 {
        let lo = from as usize;
        let hi = (to as usize + 1).min(self.active_users.len());
        if lo >= hi {
            return 0.0;
        }
        let sum: u64 = self.active_users[lo..hi].iter().map(|&n| n as u64).sum();
        sum as f64 / (hi - lo) as f64
    }
}

/// Everything a run leaves behind; the input to every metric.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub run_id: String,
    pub seed: u64,
    pub attack: Option<AttackSpec>,
    pub sybils: Option<SybilSummary>,
    pub traces: Vec<TraceEvent>,
    pub vehicles: Vec<VehicleRecord>,
    pub stats: RunStats,
    pub estimates: Vec<EstimateRow>,
    by_vehicle: HashMap<Arc<str>, usize>,
    events_by_vehicle: HashMap<Arc<str>, Vec<usize>>,
}

impl PartialEq for RunArtifacts {
    fn eq(&self, other: &Self) -> bool {
        self.run_id == other.run_id
            && self.seed == other.seed
            && self.attack == other.attack
            && self.sybils == other.sybils
            && self.traces == other.traces
            && self.vehicles == other.vehicles
            && self.stats == other.stats
            && self.estimates == other.estimates
    }
}

impl RunArtifacts {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        run_id: String,
        seed: u64,
        attack: Option<AttackSpec>,
        sybils: Option<SybilSummary>,
        traces: Vec<TraceEvent>,
        vehicles: Vec<VehicleRecord>,
        stats: RunStats,
        estimates: Vec<EstimateRow>,
    ) -> Self {
        let by_vehicle = vehicles
            .iter()
            .enumerate()
            .map(|(i, v)| (v.id.clone(), i))
            .collect();
        let mut events_by_vehicle: HashMap<Arc<str>, Vec<usize>> = HashMap::new();
        for (i, ev) in traces.iter().enumerate() {
            events_by_vehicle
                .entry(ev.vehicle_id.clone())
                .or_default()
                .push(i);
        }
        Self {
            run_id,
            seed,
            attack,
            sybils,
            traces,
            vehicles,
            stats,
            estimates,
            by_vehicle,
            events_by_vehicle,
        }
    }

    pub fn vehicle(&self, id: &str) -> Option<&VehicleRecord> {
        self.by_vehicle.get(id).map(|&i| &self.vehicles[i])
    }

    /// Trace events of one vehicle, in the order it drove them.
    pub fn events_of(&self, id: &str) -> Vec<&TraceEvent> {
        self.events_by_vehicle
            .get(id)
            .map(|idx| idx.iter().map(|&i| &self.traces[i]).collect())
            .unwrap_or_default()
    }

    pub fn save(&self, net: &RoadNetwork, dir: &Path) -> Result<Vec<String>, ExperimentError> {
        fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
        let mut written = Vec::new();

        let trace_path = dir.join(TRACE_FILE);
        let file =
            fs::File::create(&trace_path).map_err(|e| ExperimentError::io(&trace_path, e))?;
        write_trace_csv(net, &self.traces, std::io::BufWriter::new(file))?;
        written.push(TRACE_FILE.to_string());

        let doc = RunDocument {
            run_id: self.run_id.clone(),
            seed: self.seed,
            attack: self.attack.clone(),
            sybils: self.sybils,
            stats: self.stats.clone(),
            vehicles: self
                .vehicles
                .iter()
                .map(|v| VehicleDocument {
                    id: v.id.to_string(),
                    role: v.role,
                    depart: v.depart,
                    inserted_at: v.inserted_at,
                    arrived_at: v.arrived_at,
                    route_taken: v
                        .route_taken
                        .iter()
                        .map(|&e| net.edge(e).id.clone())
                        .collect(),
                })
                .collect(),
        };
        let run_path = dir.join(RUN_FILE);
        let text = serde_json::to_string_pretty(&doc)? + "\n";
        fs::write(&run_path, text).map_err(|e| ExperimentError::io(&run_path, e))?;
        written.push(RUN_FILE.to_string());

        if !self.estimates.is_empty() {
            let est_path = dir.join(ESTIMATES_FILE);
            let file =
                fs::File::create(&est_path).map_err(|e| ExperimentError::io(&est_path, e))?;
            write_estimates_csv(&self.estimates, std::io::BufWriter::new(file))?;
            written.push(ESTIMATES_FILE.to_string());
        }
        Ok(written)
    }

    /// Reloads a saved run. Estimate dumps are not read back.
    pub fn load(net: &RoadNetwork, dir: &Path) -> Result<Self, ExperimentError> {
        let run_path = dir.join(RUN_FILE);
        let text = fs::read_to_string(&run_path).map_err(|e| ExperimentError::io(&run_path, e))?;
        let doc: RunDocument = serde_json::from_str(&text)?;
        let trace_path = dir.join(TRACE_FILE);
        let file = fs::File::open(&trace_path).map_err(|e| ExperimentError::io(&trace_path, e))?;
        let traces = read_trace_csv(net, std::io::BufReader::new(file))?;
        let mut vehicles = Vec::with_capacity(doc.vehicles.len());
        for v in doc.vehicles {
            let route_taken = v
                .route_taken
                .iter()
                .map(|id| net.require_edge(id))
                .collect::<Result<_, _>>()?;
            vehicles.push(VehicleRecord {
                id: Arc::from(v.id),
                role: v.role,
                depart: v.depart,
                inserted_at: v.inserted_at,
                arrived_at: v.arrived_at,
                route_taken,
            });
        }
        Ok(Self::new(
            doc.run_id,
            doc.seed,
            doc.attack,
            doc.sybils,
            traces,
            vehicles,
            doc.stats,
            Vec::new(),
        ))
    }
}

#[derive(Serialize, Deserialize)]
struct RunDocument {
    run_id: String,
    seed: u64,
    attack: Option<AttackSpec>,
    sybils: Option<SybilSummary>,
    stats: RunStats,
    vehicles: Vec<VehicleDocument>,
}

#[derive(Serialize, Deserialize)]
struct VehicleDocument {
    id: String,
    role: Role,
    depart: u64,
    inserted_at: Option<u64>,
    arrived_at: Option<u64>,
    route_taken: Vec<String>,
}
