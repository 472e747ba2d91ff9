//! Travel demand: file IO and seeded synthetic generation.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Role;
use crate::network::{route_between_edges, EdgeIdx, RoadNetwork};

/// Attempts at drawing a connected origin/destination pair before giving up.
const MAX_OD_DRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandEntry {
    pub id: String,
    pub depart: u64,
    pub origin: String,
    pub destination: String,
    pub role: Role,
}

#[derive(Debug, Error)]
pub enum DemandError {
    #[error("cannot read demand file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid demand JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid synthetic demand: {0}")]
    Invalid(String),
    #[error("no connected origin/destination pair found after {0} draws")]
    Disconnected(usize),
}

/// Time-of-day analogs: directional rush hours and a light uniform evening.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DemandProfile {
    /// Mostly south-to-north trips with departures peaking mid-window.
    MorningRush,
    /// Mostly north-to-south trips with departures peaking mid-window.
    AfternoonRush,
    /// Uniform origins, destinations and departures.
    CalmEvening,
}

impl DemandProfile {
    pub const ALL: [DemandProfile; 3] = [
        DemandProfile::MorningRush,
        DemandProfile::AfternoonRush,
        DemandProfile::CalmEvening,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DemandProfile::MorningRush => "morning-rush",
            DemandProfile::AfternoonRush => "afternoon-rush",
            DemandProfile::CalmEvening => "calm-evening",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDemand {
    pub n_vehicles: usize,
    pub depart_start: u64,
    pub depart_end: u64,
    pub profile: DemandProfile,
    pub seed: u64,
    /// Share of trips following the profile's dominant direction.
    #[serde(default = "default_directional_share")]
    pub directional_share: f64,
}

fn default_directional_share() -> f64 {
    0.8
}

pub fn load_demand(path: impl AsRef<Path>) -> Result<Vec<DemandEntry>, DemandError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DemandError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_demand(path: impl AsRef<Path>, demand: &[DemandEntry]) -> Result<(), DemandError> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(demand)?;
    text.push('\n');
    fs::write(path, text).map_err(|source| DemandError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Number of users chosen at a penetration rate.
pub fn user_count(n: usize, rate: f64) -> usize {
    ((n as f64 * rate + 0.5).floor() as usize).min(n)
}

struct Regions {
    south: Vec<EdgeIdx>,
    north: Vec<EdgeIdx>,
    all: Vec<EdgeIdx>,
}

impl Regions {
    fn new(net: &RoadNetwork) -> Self {
        let ys = net.nodes().iter().map(|n| n.y);
        let lo = ys.clone().fold(f64::INFINITY, f64::min);
        let hi = ys.fold(f64::NEG_INFINITY, f64::max);
        let third = (hi - lo) / 3.0;
        let all = net.edges_by_id();
        let mid_y = |e: EdgeIdx| (net.node(net.source(e)).y + net.node(net.target(e)).y) / 2.0;
        let south = all
            .iter()
            .copied()
            .filter(|&e| mid_y(e) <= lo + third)
            .collect();
        let north = all
            .iter()
            .copied()
            .filter(|&e| mid_y(e) >= hi - third)
            .collect();
        Self { south, north, all }
    }
}

fn pick(rng: &mut ChaCha8Rng, from: &[EdgeIdx]) -> EdgeIdx {
    from[rng.random_range(0..from.len())]
}

/// Symmetric triangular draw on `[lo, hi]`, peaking at the midpoint.
fn triangular(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.random();
    let v: f64 = rng.random();
    lo + (hi - lo) * (u + v) / 2.0
}

/// Generates `n_vehicles` trips and marks `floor(n * rate + 0.5)` of them,
/// chosen uniformly at random, as N-MCS users. Output is sorted by departure.
pub fn generate_demand(
    net: &RoadNetwork,
    spec: &SyntheticDemand,
    penetration_rate: f64,
) -> Result<Vec<DemandEntry>, DemandError> {
    if spec.depart_end < spec.depart_start {
        return Err(DemandError::Invalid(
            "depart_end precedes depart_start".into(),
        ));
    }
    if !(penetration_rate > 0.0 && penetration_rate <= 1.0) {
        return Err(DemandError::Invalid(format!(
            "penetration_rate must be in (0, 1], got {penetration_rate}"
        )));
    }
    if !(0.0..=1.0).contains(&spec.directional_share) {
        return Err(DemandError::Invalid(
            "directional_share must be in [0, 1]".into(),
        ));
    }
    if net.edge_count() < 2 {
        return Err(DemandError::Invalid(
            "network needs at least two edges".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let regions = Regions::new(net);
    let times = net.free_flow_times();
    let (from, to) = match spec.profile {
        DemandProfile::MorningRush => (&regions.south, &regions.north),
        DemandProfile::AfternoonRush => (&regions.north, &regions.south),
        DemandProfile::CalmEvening => (&regions.all, &regions.all),
    };

    let mut trips = Vec::with_capacity(spec.n_vehicles);
    for i in 0..spec.n_vehicles {
        let directional = spec.profile != DemandProfile::CalmEvening
            && rng.random::<f64>() < spec.directional_share;
        let mut draws = 0;
        let (origin, destination) = loop {
            draws += 1;
            if draws > MAX_OD_DRAWS {
                return Err(DemandError::Disconnected(MAX_OD_DRAWS));
            }
            let (o, d) = if directional {
                (pick(&mut rng, from), pick(&mut rng, to))
            } else {
                (pick(&mut rng, &regions.all), pick(&mut rng, &regions.all))
            };
            if o != d && route_between_edges(net, &times, o, d, None).is_some() {
                break (o, d);
            }
        };
        let lo = spec.depart_start as f64;
        let hi = spec.depart_end as f64;
        let depart = match spec.profile {
            DemandProfile::CalmEvening => rng.random_range(spec.depart_start..=spec.depart_end),
            _ => triangular(&mut rng, lo, hi).round() as u64,
        };
        trips.push(DemandEntry {
            id: format!("veh{i:05}"),
            depart,
            origin: net.edge(origin).id.clone(),
            destination: net.edge(destination).id.clone(),
            role: Role::BenignNonUser,
        });
    }

    let users = user_count(spec.n_vehicles, penetration_rate);
    for i in index::sample(&mut rng, spec.n_vehicles, users) {
        trips[i].role = Role::NmcsUser;
    }
    trips.sort_by(|a, b| (a.depart, &a.id).cmp(&(b.depart, &b.id)));
    Ok(trips)
}
