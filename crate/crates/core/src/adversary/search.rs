//! Grid search for the weakest attack that diverts one victim.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AttackSpec;
use crate::experiment::{ExperimentError, RunArtifacts, Scenario};

pub const DEFAULT_COUNTS: [u64; 8] = [2, 4, 6, 8, 10, 12, 14, 16];
pub const DEFAULT_SPEEDS: [f64; 8] = [0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0];

/// A scenario with one designated victim whose route uses the target.
#[derive(Debug, Clone)]
pub struct VictimScenario {
    pub scenario: Scenario,
    pub victim: String,
    pub target: String,
    pub start: u64,
    pub duration: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrengthPoint {
    /// Total Sybils spawned on the target.
    pub count: u64,
    pub speed: f64,
    pub rerouted: bool,
    /// Safety invariant violations counted by the attack run.
    pub violations: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrengthOutcome {
    Success { min_count: u64, max_speed: f64 },
    NoSuccess,
}

impl VictimScenario {
    pub fn spec(&self, count: u64, speed: f64) -> AttackSpec {
        AttackSpec {
            targets: vec![self.target.clone()],
            start: self.start,
            duration: self.duration,
            sybil_speed: speed,
            max_sybils: Some(count),
            max_active_per_target: None,
        }
    }

    fn uses_target(&self, run: &RunArtifacts) -> Result<bool, ExperimentError> {
        let target = self.scenario.net.require_edge(&self.target)?;
        let victim = run
            .vehicle(&self.victim)
            .ok_or_else(|| ExperimentError::Invalid(format!("no vehicle `{}`", self.victim)))?;
        Ok(victim.route_taken.contains(&target))
    }

    /// Checks the victim drives the target when nobody attacks.
    pub fn baseline(&self) -> Result<RunArtifacts, ExperimentError> {
        let base = self.scenario.run_baseline()?;
        if !self.uses_target(&base)? {
            return Err(ExperimentError::Invalid(format!(
                "victim `{}` does not use `{}` in the baseline",
                self.victim, self.target
            )));
        }
        Ok(base)
    }

    /// Runs the attack `(count, speed)`; the flag tells whether it kept the
    /// victim off the target.
    pub fn attempt(&self, count: u64, speed: f64) -> Result<(bool, RunArtifacts), ExperimentError> {
        let run = self.scenario.run_attack(&self.spec(count, speed))?;
        Ok((!self.uses_target(&run)?, run))
    }
}

/// Runs every `(count, speed)` combination; results are in count-major order.
pub fn strength_grid(
    victim: &VictimScenario,
    counts: &[u64],
    speeds: &[f64],
) -> Result<Vec<StrengthPoint>, ExperimentError> {
    victim.baseline()?;
    let cells: Vec<(u64, f64)> = counts
        .iter()
        .flat_map(|&c| speeds.iter().map(move |&s| (c, s)))
        .collect();
    cells
        .into_par_iter()
        .map(|(count, speed)| {
            let (rerouted, run) = victim.attempt(count, speed)?;
            Ok(StrengthPoint {
                count,
                speed,
                rerouted,
                violations: run.stats.sim.violations(),
            })
        })
        .collect()
}

/// The frontier of a strength grid: the smallest count that diverts the
/// victim and, at that count, the largest speed that still does.
pub fn frontier(points: &[StrengthPoint]) -> StrengthOutcome {
    let Some(min_count) = points.iter().filter(|p| p.rerouted).map(|p| p.count).min() else {
        return StrengthOutcome::NoSuccess;
    };
    let max_speed = points
        .iter()
        .filter(|p| p.rerouted && p.count == min_count)
        .map(|p| p.speed)
        .fold(f64::NEG_INFINITY, f64::max);
    StrengthOutcome::Success {
        min_count,
        max_speed,
    }
}

pub fn minimal_strength_search(
    victim: &VictimScenario,
    counts: &[u64],
    speeds: &[f64],
) -> Result<StrengthOutcome, ExperimentError> {
    Ok(frontier(&strength_grid(victim, counts, speeds)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(count: u64, speed: f64, rerouted: bool) -> StrengthPoint {
        StrengthPoint {
            count,
            speed,
            rerouted,
            violations: 0,
        }
    }

    #[test]
    fn frontier_picks_min_count_then_max_speed() {
        let pts = [
            p(2, 0.5, false),
            p(2, 1.0, false),
            p(4, 0.5, true),
            p(4, 1.0, true),
            p(4, 2.0, false),
            p(6, 3.0, true),
        ];
        assert_eq!(
            frontier(&pts),
            StrengthOutcome::Success {
                min_count: 4,
                max_speed: 1.0
            }
        );
        assert_eq!(frontier(&[p(2, 6.0, false)]), StrengthOutcome::NoSuccess);
    }
}
