use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::warn;

use super::{DemandSource, ExperimentError, RunArtifacts, Scenario, ScenarioConfig};
use crate::adversary::AttackSpec;
use crate::metrics::{aggregate, impact_report, AggregateKey, AggregateSummary, ImpactReport};
use crate::mobility::DemandProfile;
use crate::network::{betweenness_centrality, select_targets, TargetSelectionConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepTargets {
    /// The top-k edges from target selection, each attacked on its own.
    Auto(TargetSelectionConfig),
    /// Target groups; every group is one attack.
    Explicit(Vec<Vec<String>>),
}

fn default_durations() -> Vec<u64> {
    vec![1200, 2400, 3600]
}

fn default_profiles() -> Vec<DemandProfile> {
    DemandProfile::ALL.to_vec()
}

fn default_speeds() -> Vec<f64> {
    vec![0.5]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Base scenario; its own attack, if any, is ignored.
    pub scenario: ScenarioConfig,
    pub targets: SweepTargets,
    pub start: u64,
    #[serde(default = "default_durations")]
    pub durations: Vec<u64>,
    /// Time-of-day analogs; only used with synthetic demand.
    #[serde(default = "default_profiles")]
    pub profiles: Vec<DemandProfile>,
    #[serde(default = "default_speeds")]
    pub sybil_speeds: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_sybils: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_active_per_target: Option<usize>,
}

impl SweepConfig {
    /// Reads a sweep file; relative paths in the scenario resolve against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        let mut config: Self = serde_json::from_str(&text)?;
        config
            .scenario
            .rebase(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Number of cells the sweep runs. With automatic targets this is an
    /// upper bound, since selection may return fewer than `k` edges.
    pub fn cell_count(&self) -> usize {
        let targets = match &self.targets {
            SweepTargets::Auto(sel) => sel.k,
            SweepTargets::Explicit(groups) => groups.len(),
        };
        let profiles = match self.scenario.demand {
            DemandSource::Synthetic(_) => self.profiles.len(),
            DemandSource::Path(_) => 1,
        };
        targets * self.durations.len() * profiles * self.sybil_speeds.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub targets: Vec<String>,
    pub duration: u64,
    pub profile: String,
    pub sybil_speed: f64,
}

impl SweepCell {
    pub fn target_label(&self) -> String {
        self.targets.join("+")
    }

    pub fn label(&self) -> String {
        format!(
            "{}_{}s_{}_{}mps",
            self.target_label(),
            self.duration,
            self.profile,
            self.sybil_speed
        )
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: SweepCell,
    pub outcome: Result<(ImpactReport, RunArtifacts), String>,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub cells: Vec<CellResult>,
    pub baselines: BTreeMap<String, Result<(Scenario, RunArtifacts), String>>,
    pub summary: AggregateSummary,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_err()).count()
    }
}

fn profile_scenarios(config: &SweepConfig) -> Vec<(String, ScenarioConfig)> {
    match &config.scenario.demand {
        DemandSource::Synthetic(base) => config
            .profiles
            .iter()
            .map(|&p| {
                let mut cfg = config.scenario.clone();
                cfg.attack = None;
                let mut demand = base.clone();
                demand.profile = p;
                cfg.demand = DemandSource::Synthetic(demand);
                (p.as_str().to_string(), cfg)
            })
            .collect(),
        DemandSource::Path(_) => {
            let mut cfg = config.scenario.clone();
            cfg.attack = None;
            vec![("file".to_string(), cfg)]
        }
    }
}

/// Cartesian product of targets, durations, profiles and speeds. Every cell
/// is a paired baseline/attack run; baselines are shared per profile. Cells
/// run in parallel and a failing cell is reported without stopping the rest.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepOutcome, ExperimentError> {
    config.scenario.validate()?;
    if config.durations.is_empty() || config.sybil_speeds.is_empty() {
        return Err(ExperimentError::Invalid(
            "durations and sybil_speeds must not be empty".into(),
        ));
    }
    let net = config.scenario.build_network()?;
    let target_groups: Vec<Vec<String>> = match &config.targets {
        SweepTargets::Explicit(groups) => groups.clone(),
        SweepTargets::Auto(sel) => {
            let times = net.free_flow_times();
            let scores = betweenness_centrality(&net, &times);
            select_targets(&net, &times, &scores, sel)?
                .selected
                .iter()
                .map(|c| vec![net.edge(c.edge).id.clone()])
                .collect()
        }
    };
    if target_groups.is_empty() {
        warn!("no attack targets; the sweep is empty");
    }

    let profiles = profile_scenarios(config);
    let baselines: BTreeMap<String, Result<(Scenario, RunArtifacts), String>> = profiles
        .par_iter()
        .map(|(label, cfg)| {
            let result = cfg
                .build_demand(&net)
                .map(|demand| Scenario::new(cfg.clone(), Arc::clone(&net), demand))
                .and_then(|s| {
                    let base = s.run_baseline()?;
                    Ok((s, base))
                })
                .map_err(|e| e.to_string());
            (label.clone(), result)
        })
        .collect();

    let mut cells = Vec::new();
    for targets in &target_groups {
        for &duration in &config.durations {
            for (profile, _) in &profiles {
                for &speed in &config.sybil_speeds {
                    cells.push(SweepCell {
                        targets: targets.clone(),
                        duration,
                        profile: profile.clone(),
                        sybil_speed: speed,
                    });
                }
            }
        }
    }

    let results: Vec<CellResult> = cells
        .into_par_iter()
        .map(|cell| {
            let outcome = match &baselines[&cell.profile] {
                Err(e) => Err(format!("baseline failed: {e}")),
                Ok((scenario, baseline)) => {
                    let spec = AttackSpec {
                        targets: cell.targets.clone(),
                        start: config.start,
                        duration: cell.duration,
                        sybil_speed: cell.sybil_speed,
                        max_sybils: config.max_sybils,
                        max_active_per_target: config.max_active_per_target,
                    };
                    scenario
                        .run_attack(&spec)
                        .and_then(|attack| {
                            let report = impact_report(&scenario.net, baseline, &attack, &spec)?;
                            Ok((report, attack))
                        })
                        .map_err(|e| e.to_string())
                }
            };
            if let Err(e) = &outcome {
                warn!(cell = %cell.label(), error = %e, "sweep cell failed");
            }
            CellResult { cell, outcome }
        })
        .collect();

    let keyed: Vec<(AggregateKey, &ImpactReport)> = results
        .iter()
        .filter_map(|r| {
            let (report, _) = r.outcome.as_ref().ok()?;
            Some((
                AggregateKey {
                    target: r.cell.target_label(),
                    duration: r.cell.duration,
                    profile: r.cell.profile.clone(),
                },
                report,
            ))
        })
        .collect();
    let summary = aggregate(&keyed);
    Ok(SweepOutcome {
        cells: results,
        baselines,
        summary,
    })
}
