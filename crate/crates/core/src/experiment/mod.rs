//! Scenario configuration, the lockstep co-simulation loop and sweeps.

mod artifacts;
mod sweep;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::{info, warn};

use crate::adversary::{inject, presimulate, AttackError, AttackSpec, SybilTrace};
use crate::mobility::{
    generate_demand, load_demand, DemandEntry, DemandError, Role, SimConfig, SimError, SimState,
    SyntheticDemand, TraceIoError,
};
use crate::network::{load_network, EdgeIdx, GridSpec, NetworkError, RoadNetwork};
use crate::server::{EstimateRow, NmcsServer, ServerError, WindowConfig};

pub use artifacts::{RunArtifacts, RunStats, VehicleRecord, ESTIMATES_FILE, RUN_FILE, TRACE_FILE};
pub use sweep::{run_sweep, CellResult, SweepCell, SweepConfig, SweepOutcome, SweepTargets};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Demand(#[from] DemandError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Trace(#[from] TraceIoError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

impl ExperimentError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSource {
    Path(PathBuf),
    Grid(GridSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DemandSource {
    Path(PathBuf),
    Synthetic(SyntheticDemand),
}

fn default_penetration() -> f64 {
    0.5
}

fn default_horizon() -> u64 {
    7200
}

/// One scenario: network, demand, service and simulation parameters and an
/// optional attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub network: NetworkSource,
    pub demand: DemandSource,
    /// Share of synthetic vehicles that are N-MCS users. Demand files carry
    /// their own roles.
    #[serde(default = "default_penetration")]
    pub penetration_rate: f64,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackSpec>,
    /// Last simulated second.
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default)]
    pub record_estimates: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ScenarioConfig {
    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        let mut config: Self = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.rebase(base);
        Ok(config)
    }

    pub(crate) fn rebase(&mut self, base: &Path) {
        if let NetworkSource::Path(p) = &mut self.network {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let DemandSource::Path(p) = &mut self.demand {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Replaces every seed in the config.
    pub fn set_seed(&mut self, seed: u64) {
        self.sim.seed = seed;
        if let DemandSource::Synthetic(s) = &mut self.demand {
            s.seed = seed;
        }
    }

    pub fn seed(&self) -> u64 {
        self.sim.seed
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if !(self.penetration_rate > 0.0 && self.penetration_rate <= 1.0) {
            return Err(ExperimentError::Invalid(format!(
                "penetration_rate must be in (0, 1], got {}",
                self.penetration_rate
            )));
        }
        self.window.validate()?;
        self.sim.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn build_network(&self) -> Result<Arc<RoadNetwork>, ExperimentError> {
        let net = match &self.network {
            NetworkSource::Path(p) => load_network(p)?,
            NetworkSource::Grid(g) => g.build()?,
        };
        Ok(Arc::new(net))
    }

    pub fn build_demand(&self, net: &RoadNetwork) -> Result<Vec<DemandEntry>, ExperimentError> {
        Ok(match &self.demand {
            DemandSource::Path(p) => load_demand(p)?,
            DemandSource::Synthetic(s) => generate_demand(net, s, self.penetration_rate)?,
        })
    }

    pub fn resolve(&self) -> Result<Scenario, ExperimentError> {
        self.validate()?;
        let net = self.build_network()?;
        let demand = self.build_demand(&net)?;
        if let Some(attack) = &self.attack {
            attack.resolve(&net)?;
        }
        Ok(Scenario {
            config: self.clone(),
            net,
            demand,
        })
    }
}

/// A config with its network built and demand materialized.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub net: Arc<RoadNetwork>,
    pub demand: Vec<DemandEntry>,
}

impl Scenario {
    pub fn new(config: ScenarioConfig, net: Arc<RoadNetwork>, demand: Vec<DemandEntry>) -> Self {
        Self {
            config,
            net,
            demand,
        }
    }

    /// The attack-free run.
    pub fn run_baseline(&self) -> Result<RunArtifacts, ExperimentError> {
        simulate(self, None, "baseline")
    }

    /// Pre-simulates the attack and runs with it injected.
    pub fn run_attack(&self, spec: &AttackSpec) -> Result<RunArtifacts, ExperimentError> {
        let trace = presimulate(&self.net, spec, &self.config.sim)?;
        simulate(self, Some((spec, &trace)), "attack")
    }

    /// Runs the config's own attack, or the baseline when it has none.
    pub fn run(&self) -> Result<RunArtifacts, ExperimentError> {
        match &self.config.attack {
            Some(spec) => self.run_attack(spec),
            None => self.run_baseline(),
        }
    }
}

/// The lockstep loop. Each second `t`:
///
/// 1. the server window moves to `t`,
/// 2. every active user's report and every Sybil report stamped `t` is ingested,
/// 3. on a slide boundary the estimate table is republished and all users
///    are rerouted,
/// 4. the traffic advances to `t + 1` and newly departed users get a route
///    from the current table.
///
/// The run ends when every vehicle has arrived or at the horizon.
pub fn simulate(
    scenario: &Scenario,
    attack: Option<(&AttackSpec, &SybilTrace)>,
    run_id: &str,
) -> Result<RunArtifacts, ExperimentError> {
    let cfg = &scenario.config;
    let net = &scenario.net;
    let mut sim = SimState::from_demand(Arc::clone(net), cfg.sim, &scenario.demand)?;
    let mut server = NmcsServer::new(Arc::clone(net), cfg.window)?;
    if cfg.record_estimates {
        server.record_estimates();
    }
    let mut stats = RunStats::default();

    for key in sim.take_newly_inserted() {
        server.reroute_vehicle(&mut sim, key);
    }

    loop {
        let t = sim.now();
        server.advance(t);
        server.ingest_all(&sim.emit_reports());
        if let Some((_, trace)) = attack {
            stats.sybil_reports_injected += inject(trace, &mut server, t) as u64;
        }
        if server.is_slide(t) {
            server.refresh();
            stats.reroutes.absorb(server.reroute_users(&mut sim));
        }
        let users = sim
            .vehicles()
            .iter()
            .filter(|v| v.is_active() && v.role == Role::NmcsUser)
            .count();
        stats.active_users.push(users as u32);

        if sim.is_finished() || t >= cfg.horizon {
            break;
        }
        sim.step();
        for key in sim.take_newly_inserted() {
            server.reroute_vehicle(&mut sim, key);
        }
    }

    stats.sim = *sim.stats();
    stats.window = server.window().stats();
    stats.end_time = sim.now();
    let artifacts = collect(&sim, attack, run_id, stats, server.estimate_rows().to_vec());
    if artifacts.stats.unfinished > 0 {
        warn!(
            run = run_id,
            unfinished = artifacts.stats.unfinished,
            "vehicles still travelling at the horizon"
        );
    }
    info!(run = run_id, end = artifacts.stats.end_time, "run complete");
    Ok(artifacts)
}

fn collect(
    sim: &SimState,
    attack: Option<(&AttackSpec, &SybilTrace)>,
    run_id: &str,
    mut stats: RunStats,
    estimates: Vec<EstimateRow>,
) -> RunArtifacts {
    let traces = sim.trace().to_vec();
    let mut taken: HashMap<&str, Vec<EdgeIdx>> = HashMap::new();
    for ev in &traces {
        taken.entry(&ev.vehicle_id).or_default().push(ev.edge);
    }
    let vehicles: Vec<VehicleRecord> = sim
        .vehicles()
        .iter()
        .map(|v| VehicleRecord {
            id: v.id.clone(),
            role: v.role,
            depart: v.depart,
            inserted_at: v.inserted_at,
            arrived_at: v.arrived_at,
            route_taken: taken.remove(&*v.id).unwrap_or_default(),
        })
        .collect();
    stats.unfinished = vehicles.iter().filter(|v| !v.finished()).count() as u64;
    RunArtifacts::new(
        run_id.to_string(),
        sim.config().seed,
        attack.map(|(spec, _)| spec.clone()),
        attack.map(|(_, trace)| trace.summary()),
        traces,
        vehicles,
        stats,
        estimates,
    )
}
