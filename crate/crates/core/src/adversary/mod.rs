//! Sybil attack engine.
//!
//! Ghost vehicles are simulated ahead of time on an empty copy of the road
//! network; their per-second reports are then replayed into the live server.

mod search;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mobility::{Role, SimConfig, SimError, SimState, Vehicle};
use crate::network::{EdgeIdx, RoadNetwork};
use crate::report::{read_reports_csv, write_reports_csv, Report, ReportIoError};
use crate::server::NmcsServer;

pub use search::{
    frontier, minimal_strength_search, strength_grid, StrengthOutcome, StrengthPoint,
    VictimScenario, DEFAULT_COUNTS, DEFAULT_SPEEDS,
};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack spec: {0}")]
    Invalid(String),
    #[error("attack target `{0}` is not an edge of the network")]
    UnknownTarget(String),
    #[error("max_sybils = 0 admits no Sybil")]
    NoSybilsAllowed,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Reports(#[from] ReportIoError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid summary JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Everything that determines an attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub targets: Vec<String>,
    pub start: u64,
    pub duration: u64,
    pub sybil_speed: f64,
    /// Cap on the total number of Sybils spawned over all targets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_sybils: Option<u64>,
    /// Cap on Sybils simultaneously present on one target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_active_per_target: Option<usize>,
}

impl AttackSpec {
    /// Last second of the attack period.
    pub fn end(&self) -> u64 {
        self.start + self.duration
    }

    /// True when `t` lies in the closed attack period `[start, start + duration]`.
    pub fn covers(&self, t: u64) -> bool {
        t >= self.start && t <= self.end()
    }

    /// Validates the spec against a network and resolves the target edges.
    /// A zero duration is accepted and describes an attack that spawns nothing.
    pub fn resolve(&self, net: &RoadNetwork) -> Result<Vec<EdgeIdx>, AttackError> {
        if self.targets.is_empty() {
            return Err(AttackError::Invalid("targets must not be empty".into()));
        }
        if !(self.sybil_speed.is_finite() && self.sybil_speed > 0.0) {
            return Err(AttackError::Invalid(format!(
                "sybil_speed must be positive, got {}",
                self.sybil_speed
            )));
        }
        if self.max_sybils == Some(0) {
            return Err(AttackError::NoSybilsAllowed);
        }
        if self.max_active_per_target == Some(0) {
            return Err(AttackError::Invalid(
                "max_active_per_target must be at least 1".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        let mut edges = Vec::with_capacity(self.targets.len());
        for id in &self.targets {
            let e = net
                .edge_idx(id)
                .ok_or_else(|| AttackError::UnknownTarget(id.clone()))?;
            if !seen.insert(e) {
                return Err(AttackError::Invalid(format!("target `{id}` listed twice")));
            }
            edges.push(e);
        }
        Ok(edges)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AttackError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| AttackError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SybilSummary {
    pub total_spawned: u64,
    pub max_concurrent: u64,
}

/// Pre-simulated Sybil reports, sorted by `(t, id)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SybilTrace {
    reports: Vec<Report>,
    summary: SybilSummary,
}

impl SybilTrace {
    pub fn new(mut reports: Vec<Report>, total_spawned: u64) -> Self {
        reports.sort_by(|a, b| (a.t, &a.id).cmp(&(b.t, &b.id)));
        let max_concurrent = max_per_timestep(&reports);
        Self {
            reports,
            summary: SybilSummary {
                total_spawned,
                max_concurrent,
            },
        }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn reports(&self) -> &[Report] {
        &self.reports
    }

    pub fn summary(&self) -> SybilSummary {
        self.summary
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    /// Reports stamped with `t`.
    pub fn reports_at(&self, t: u64) -> &[Report] {
        let lo = self.reports.partition_point(|r| r.t < t);
        let hi = self.reports.partition_point(|r| r.t <= t);
        &self.reports[lo..hi]
    }

    /// First and last report timestamps.
    pub fn time_range(&self) -> Option<(u64, u64)> {
        Some((self.reports.first()?.t, self.reports.last()?.t))
    }

    /// Reports grouped per Sybil identity, each in time order.
    pub fn streams(&self) -> BTreeMap<Arc<str>, Vec<&Report>> {
        let mut out: BTreeMap<Arc<str>, Vec<&Report>> = BTreeMap::new();
        for r in &self.reports {
            out.entry(r.id.clone()).or_default().push(r);
        }
        out
    }

    /// Union of independently pre-simulated traces.
    pub fn merge(traces: impl IntoIterator<Item = SybilTrace>) -> Self {
        let mut reports = Vec::new();
        let mut total = 0;
        for t in traces {
            total += t.summary.total_spawned;
            reports.extend(t.reports);
        }
        Self::new(reports, total)
    }

    pub fn write_csv(&self, net: &RoadNetwork, out: impl Write) -> Result<(), AttackError> {
        Ok(write_reports_csv(net, &self.reports, out)?)
    }

    pub fn read_csv(
        net: &RoadNetwork,
        input: impl Read,
        summary: SybilSummary,
    ) -> Result<Self, AttackError> {
        let mut trace = Self::new(read_reports_csv(net, input)?, summary.total_spawned);
        trace.summary.max_concurrent = summary.max_concurrent;
        Ok(trace)
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes") + "\n"
    }
}

fn max_per_timestep(sorted: &[Report]) -> u64 {
    let mut best = 0u64;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].t;
        let j = i + sorted[i..].partition_point(|r| r.t == t);
        best = best.max((j - i) as u64);
        i = j;
    }
    best
}

/// Simulates the attack on an empty copy of the network.
///
/// From `start` until `start + duration` (exclusive) a Sybil is spawned on
/// every lane of every target whenever the lane's entry headway admits one.
/// Sybils enter already driving at the attack speed (capped by the speed
/// limit), drive their target edge only and vanish at its end. Reports are
/// recorded every second until the last Sybil has left.
pub fn presimulate(
    net: &Arc<RoadNetwork>,
    spec: &AttackSpec,
    sim_config: &SimConfig,
) -> Result<SybilTrace, AttackError> {
    let targets = spec.resolve(net)?;
    let mut sim = SimState::starting_at(Arc::clone(net), *sim_config, spec.start)?;
    let mut per_target_count = vec![0u64; targets.len()];
    let mut spawned = 0u64;
    let mut reports = Vec::new();
    let spawn_end = spec.end();

    loop {
        let t = sim.now();
        if t < spawn_end {
            for (ti, &target) in targets.iter().enumerate() {
                let lanes = net.edge(target).lanes;
                let initial = spec.sybil_speed.min(net.edge(target).speed_limit);
                for lane in 0..lanes {
                    if spec.max_sybils.is_some_and(|cap| spawned >= cap) {
                        break;
                    }
                    if let Some(cap) = spec.max_active_per_target {
                        let active: usize = (0..lanes)
                            .map(|l| sim.lane_occupants(target, l).len())
                            .sum();
                        if active >= cap {
                            break;
                        }
                    }
                    let id = format!("sybil-{}-{}", net.edge(target).id, per_target_count[ti]);
                    let v = Vehicle::new(id, t, Role::Sybil, vec![target])
                        .with_speed_cap(spec.sybil_speed);
                    if sim.spawn_on_lane(v, lane, initial)?.is_some() {
                        per_target_count[ti] += 1;
                        spawned += 1;
                    }
                }
            }
        }
        reports.extend(sim.reports_from(Role::Sybil));
        if t + 1 >= spawn_end && sim.active_count() == 0 {
            break;
        }
        sim.step();
    }

    let stats = sim.stats();
    debug_assert_eq!(stats.gap_violations, 0);
    Ok(SybilTrace::new(reports, spawned))
}

/// Delivers every trace report stamped `t` to the server. Returns the number
/// of reports delivered.
pub fn inject(trace: &SybilTrace, server: &mut NmcsServer, t: u64) -> usize {
    let batch = trace.reports_at(t);
    for r in batch {
        server.ingest(r);
    }
    batch.len()
}
