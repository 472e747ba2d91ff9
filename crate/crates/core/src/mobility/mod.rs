//! Discrete-time microscopic traffic simulation.
//!
//! Time advances in steps of exactly one second. Each lane keeps its vehicles
//! ordered leader first; a vehicle never drives closer than `min_gap` to the
//! rear of the vehicle ahead (safe-speed rule), and can only enter the next
//! edge of its route when that edge's entry lane has room.

mod demand;
mod trace;

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{route_between_edges, EdgeIdx, RoadNetwork};
use crate::report::Report;

pub use demand::{
    generate_demand, load_demand, save_demand, user_count, DemandEntry, DemandError, DemandProfile,
    SyntheticDemand,
};
pub use trace::{read_trace_csv, write_trace_csv, TraceEvent, TraceIoError};

/// Slack for floating point comparisons on positions (meters).
const POSITION_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("unknown edge `{0}`")]
    UnknownEdge(String),
    #[error("edge index {0} out of range")]
    EdgeOutOfRange(usize),
    #[error("vehicle `{0}` already present")]
    DuplicateVehicle(String),
    #[error("vehicle `{0}` departs at {1}, after the current time {2}")]
    DepartInFuture(String, u64, u64),
    #[error("no route for vehicle `{0}` from its origin to its destination")]
    Unroutable(String),
    #[error("vehicle `{0}` has an invalid route: {1}")]
    InvalidRoute(String, String),
    #[error("vehicle `{0}` in demand has role sybil; sybils come from the adversary")]
    SybilInDemand(String),
    #[error("lane {lane} does not exist on edge `{edge}`")]
    NoSuchLane { edge: String, lane: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Step length in seconds; the reporting task runs at 1 Hz, so this must be 1.
    pub dt: f64,
    pub vehicle_length: f64,
    pub min_gap: f64,
    pub accel: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1.0,
            vehicle_length: 5.0,
            min_gap: 2.5,
            accel: 2.6,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.dt != 1.0 {
            return Err(SimError::InvalidConfig(format!(
                "dt must be exactly 1 s, got {}",
                self.dt
            )));
        }
        for (name, v) in [
            ("vehicle_length", self.vehicle_length),
            ("min_gap", self.min_gap),
            ("accel", self.accel),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Front-to-front spacing of two vehicles standing at minimum gap.
    pub fn headway(&self) -> f64 {
        self.vehicle_length + self.min_gap
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    BenignNonUser,
    NmcsUser,
    Sybil,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::BenignNonUser => "benign-non-user",
            Role::NmcsUser => "nmcs-user",
            Role::Sybil => "sybil",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VehicleKey(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VehicleStatus {
    Pending,
    Active,
    Arrived,
}

#[derive(Debug, Clone)]
pub struct Vehicle {
    pub id: Arc<str>,
    pub depart: u64,
    pub origin: EdgeIdx,
    pub destination: EdgeIdx,
    pub role: Role,
    pub route: Vec<EdgeIdx>,
    /// Index into `route` of the edge currently driven.
    pub route_pos: usize,
    pub lane: u32,
    /// Front bumper, meters from the start of the current edge.
    pub position: f64,
    pub speed: f64,
    pub max_speed_cap: f64,
    pub status: VehicleStatus,
    pub inserted_at: Option<u64>,
    pub arrived_at: Option<u64>,
    open_event: Option<usize>,
    moved_at: u64,
}

impl Vehicle {
    pub fn new(id: impl Into<Arc<str>>, depart: u64, role: Role, route: Vec<EdgeIdx>) -> Self {
        let origin = *route.first().expect("route must not be empty");
        let destination = *route.last().expect("route must not be empty");
        Self {
            id: id.into(),
            depart,
            origin,
            destination,
            role,
            route,
            route_pos: 0,
            lane: 0,
            position: 0.0,
            speed: 0.0,
            max_speed_cap: f64::INFINITY,
            status: VehicleStatus::Pending,
            inserted_at: None,
            arrived_at: None,
            open_event: None,
            moved_at: 0,
        }
    }

    pub fn with_speed_cap(mut self, cap: f64) -> Self {
        self.max_speed_cap = cap;
        self
    }

    pub fn current_edge(&self) -> EdgeIdx {
        self.route[self.route_pos]
    }

    pub fn on_final_edge(&self) -> bool {
        self.route_pos + 1 == self.route.len()
    }

    pub fn is_active(&self) -> bool {
        self.status == VehicleStatus::Active
    }
}

/// Counters maintained while stepping; any non-zero violation count is a bug.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub steps: u64,
    pub inserted: u64,
    pub arrived: u64,
    pub insertion_retries: u64,
    pub blocked_at_edge_end: u64,
    pub gap_violations: u64,
    pub speed_violations: u64,
    pub position_violations: u64,
    pub conservation_violations: u64,
}

impl SimStats {
    pub fn violations(&self) -> u64 {
        self.gap_violations
            + self.speed_violations
            + self.position_violations
            + self.conservation_violations
    }
}

pub struct SimState {
    net: Arc<RoadNetwork>,
    config: SimConfig,
    now: u64,
    vehicles: Vec<Vehicle>,
    by_id: HashMap<Arc<str>, VehicleKey>,
    lanes: Vec<Vec<VecDeque<VehicleKey>>>,
    edge_order: Vec<EdgeIdx>,
    pending: Vec<VehicleKey>,
    newly_inserted: Vec<VehicleKey>,
    active: usize,
    trace: Vec<TraceEvent>,
    stats: SimStats,
}

impl SimState {
    pub fn new(net: Arc<RoadNetwork>, config: SimConfig) -> Result<Self, SimError> {
        Self::starting_at(net, config, 0)
    }

    pub fn starting_at(
        net: Arc<RoadNetwork>,
        config: SimConfig,
        now: u64,
    ) -> Result<Self, SimError> {
        config.validate()?;
        let lanes = net
            .edges()
            .iter()
            .map(|e| vec![VecDeque::new(); e.lanes as usize])
            .collect();
        let edge_order = net.edges_by_id();
        Ok(Self {
            net,
            config,
            now,
            vehicles: Vec::new(),
            by_id: HashMap::new(),
            lanes,
            edge_order,
            pending: Vec::new(),
            newly_inserted: Vec::new(),
            active: 0,
            trace: Vec::new(),
            stats: SimStats::default(),
        })
    }

    /// Builds a state from a demand list. Every vehicle starts on its
    /// free-flow shortest route; vehicles departing at `t = 0` are inserted.
    pub fn from_demand(
        net: Arc<RoadNetwork>,
        config: SimConfig,
        demand: &[DemandEntry],
    ) -> Result<Self, SimError> {
        let mut sim = Self::new(net, config)?;
        let times = sim.net.free_flow_times();
        for entry in demand {
            if entry.role == Role::Sybil {
                return Err(SimError::SybilInDemand(entry.id.clone()));
            }
            let origin = sim
                .net
                .edge_idx(&entry.origin)
                .ok_or_else(|| SimError::UnknownEdge(entry.origin.clone()))?;
            let destination = sim
                .net
                .edge_idx(&entry.destination)
                .ok_or_else(|| SimError::UnknownEdge(entry.destination.clone()))?;
            let route = route_between_edges(&sim.net, &times, origin, destination, None)
                .ok_or_else(|| SimError::Unroutable(entry.id.clone()))?;
            sim.schedule(Vehicle::new(
                entry.id.as_str(),
                entry.depart,
                entry.role,
                route.edges,
            ))?;
        }
        sim.insert_pending();
        Ok(sim)
    }

    pub fn network(&self) -> &Arc<RoadNetwork> {
        &self.net
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn stats(&self) -> &SimStats {
        &self.stats
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn vehicle(&self, key: VehicleKey) -> &Vehicle {
        &self.vehicles[key.0]
    }

    pub fn key_of(&self, id: &str) -> Option<VehicleKey> {
        self.by_id.get(id).copied()
    }

    pub fn active_count(&self) -> usize {
        self.active
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    pub fn is_finished(&self) -> bool {
        self.active == 0 && self.pending.is_empty()
    }

    /// Active vehicles in registration order.
    pub fn active_keys(&self) -> Vec<VehicleKey> {
        self.vehicles
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_active())
            .map(|(i, _)| VehicleKey(i))
            .collect()
    }

    /// Vehicles on `lane` of `edge`, leader first.
    pub fn lane_occupants(&self, edge: EdgeIdx, lane: u32) -> &VecDeque<VehicleKey> {
        &self.lanes[edge.0][lane as usize]
    }

    /// Vehicles placed on the network since the last call.
    pub fn take_newly_inserted(&mut self) -> Vec<VehicleKey> {
        std::mem::take(&mut self.newly_inserted)
    }

    fn register(&mut self, v: Vehicle) -> Result<VehicleKey, SimError> {
        for &e in &v.route {
            if e.0 >= self.net.edge_count() {
                return Err(SimError::EdgeOutOfRange(e.0));
            }
        }
        self.check_route(&v.id, &v.route)?;
        if self.by_id.contains_key(&v.id) {
            return Err(SimError::DuplicateVehicle(v.id.to_string()));
        }
        let key = VehicleKey(self.vehicles.len());
        self.by_id.insert(v.id.clone(), key);
        self.vehicles.push(v);
        Ok(key)
    }

    fn check_route(&self, id: &str, route: &[EdgeIdx]) -> Result<(), SimError> {
        if route.is_empty() {
            return Err(SimError::InvalidRoute(id.into(), "empty".into()));
        }
        if route
            .windows(2)
            .any(|w| self.net.target(w[0]) != self.net.source(w[1]))
        {
            return Err(SimError::InvalidRoute(id.into(), "not connected".into()));
        }
        let mut sorted = route.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(SimError::InvalidRoute(id.into(), "repeats an edge".into()));
        }
        Ok(())
    }

    /// Queues a vehicle; it is inserted by the first insertion pass at or
    /// after its departure time that finds room on its origin edge.
    pub fn schedule(&mut self, v: Vehicle) -> Result<VehicleKey, SimError> {
        let key = self.register(v)?;
        let pos = self.pending.partition_point(|&k| {
            let a = &self.vehicles[k.0];
            let b = &self.vehicles[key.0];
            (a.depart, &a.id) <= (b.depart, &b.id)
        });
        self.pending.insert(pos, key);
        Ok(key)
    }

    /// Attempts to place `v` on its origin edge now. When there is no room it
    /// stays queued and is retried at the next step.
    pub fn insert_vehicle(&mut self, v: Vehicle) -> Result<bool, SimError> {
        if v.depart > self.now {
            return Err(SimError::DepartInFuture(
                v.id.to_string(),
                v.depart,
                self.now,
            ));
        }
        let key = self.schedule(v)?;
        let inserted = self.try_insert(key);
        if inserted {
            self.pending.retain(|&k| k != key);
        }
        Ok(inserted)
    }

    /// Places `v` on a specific lane of its origin edge if the headway allows;
    /// otherwise the vehicle is discarded and `None` returned.
    pub fn spawn_on_lane(
        &mut self,
        v: Vehicle,
        lane: u32,
        initial_speed: f64,
    ) -> Result<Option<VehicleKey>, SimError> {
        let origin = v.origin;
        if lane as usize >= self.lanes[origin.0].len() {
            return Err(SimError::NoSuchLane {
                edge: self.net.edge(origin).id.clone(),
                lane,
            });
        }
        if self.lane_entry_space(origin, lane) < self.config.min_gap {
            return Ok(None);
        }
        let key = self.register(v)?;
        self.place(key, lane, initial_speed);
        Ok(Some(key))
    }

    pub fn insert_pending(&mut self) {
        let now = self.now;
        let due: Vec<VehicleKey> = self
            .pending
            .iter()
            .copied()
            .take_while(|&k| self.vehicles[k.0].depart <= now)
            .collect();
        let mut still_waiting = Vec::new();
        for key in due.iter().copied() {
            if !self.try_insert(key) {
                self.stats.insertion_retries += 1;
                still_waiting.push(key);
            }
        }
        let rest = self.pending.split_off(due.len());
        self.pending = still_waiting;
        self.pending.extend(rest);
    }

    fn try_insert(&mut self, key: VehicleKey) -> bool {
        let origin = self.vehicles[key.0].origin;
        let (lane, space) = self.entry_lane(origin);
        if space < self.config.min_gap {
            return false;
        }
        self.place(key, lane, 0.0);
        true
    }

    fn place(&mut self, key: VehicleKey, lane: u32, speed: f64) {
        let now = self.now;
        let event = self.trace.len();
        let v = &mut self.vehicles[key.0];
        let edge = v.origin;
        let limit = self.net.edge(edge).speed_limit;
        v.route_pos = 0;
        v.lane = lane;
        v.position = 0.0;
        v.speed = speed.min(limit).min(v.max_speed_cap).max(0.0);
        v.status = VehicleStatus::Active;
        v.inserted_at = Some(now);
        v.open_event = Some(event);
        v.moved_at = now;
        self.trace.push(TraceEvent {
            vehicle_id: v.id.clone(),
            edge,
            entry_time: now,
            exit_time: None,
        });
        self.lanes[edge.0][lane as usize].push_back(key);
        self.newly_inserted.push(key);
        self.active += 1;
        self.stats.inserted += 1;
    }

    /// Room behind the last vehicle of a lane, measured from the edge start
    /// to that vehicle's rear bumper. Infinite for an empty lane.
    fn lane_entry_space(&self, edge: EdgeIdx, lane: u32) -> f64 {
        match self.lanes[edge.0][lane as usize].back() {
            None => f64::INFINITY,
            Some(&k) => self.vehicles[k.0].position - self.config.vehicle_length,
        }
    }

    /// Least occupied lane of an edge (ties: more room, then lower index)
    /// together with its entry space.
    fn entry_lane(&self, edge: EdgeIdx) -> (u32, f64) {
        let mut best = (0u32, f64::NEG_INFINITY, usize::MAX);
        for (i, q) in self.lanes[edge.0].iter().enumerate() {
            let space = self.lane_entry_space(edge, i as u32);
            let count = q.len();
            if count < best.2 || (count == best.2 && space > best.1) {
                best = (i as u32, space, count);
            }
        }
        (best.0, best.1)
    }

    fn leaderless_gap(&self, v: &Vehicle) -> f64 {
        if v.on_final_edge() {
            return f64::INFINITY;
        }
        let edge_len = self.net.edge(v.current_edge()).length;
        let next = v.route[v.route_pos + 1];
        let (_, space) = self.entry_lane(next);
        if space.is_infinite() {
            f64::INFINITY
        } else {
            (edge_len - v.position) + space
        }
    }

    /// Advances every vehicle by one step, then runs an insertion pass at the
    /// new time. Edges are visited in id order and lanes leader first.
    pub fn step(&mut self) {
        let dt = self.config.dt;
        let len = self.config.vehicle_length;
        let min_gap = self.config.min_gap;
        let accel = self.config.accel;
        let next_t = self.now + 1;

        for oi in 0..self.edge_order.len() {
            let e = self.edge_order[oi];
            let edge_len = self.net.edge(e).length;
            let limit = self.net.edge(e).speed_limit;
            for lane in 0..self.lanes[e.0].len() {
                let mut i = 0;
                while i < self.lanes[e.0][lane].len() {
                    let key = self.lanes[e.0][lane][i];
                    if self.vehicles[key.0].moved_at == next_t {
                        i += 1;
                        continue;
                    }
                    let gap = if i > 0 {
                        let leader = &self.vehicles[self.lanes[e.0][lane][i - 1].0];
                        leader.position - len - self.vehicles[key.0].position
                    } else {
                        self.leaderless_gap(&self.vehicles[key.0])
                    };
                    let v_safe = (gap - min_gap) / dt;
                    let v = &self.vehicles[key.0];
                    let cap = limit.min(v.max_speed_cap).min(v_safe);
                    let new_speed = (v.speed + accel * dt).min(cap).max(0.0);
                    let old_pos = v.position;
                    let new_pos = old_pos + new_speed * dt;
                    self.vehicles[key.0].moved_at = next_t;

                    if new_pos < edge_len {
                        let v = &mut self.vehicles[key.0];
                        v.position = new_pos;
                        v.speed = new_speed;
                        i += 1;
                        continue;
                    }

                    if self.vehicles[key.0].on_final_edge() {
                        self.lanes[e.0][lane].remove(i);
                        self.close_event(key, next_t);
                        let v = &mut self.vehicles[key.0];
                        v.status = VehicleStatus::Arrived;
                        v.arrived_at = Some(next_t);
                        v.position = edge_len;
                        v.speed = new_speed;
                        self.active -= 1;
                        self.stats.arrived += 1;
                        continue;
                    }

                    let next = {
                        let v = &self.vehicles[key.0];
                        v.route[v.route_pos + 1]
                    };
                    let overshoot = new_pos - edge_len;
                    let (next_lane, space) = self.entry_lane(next);
                    if space - overshoot >= min_gap {
                        self.lanes[e.0][lane].remove(i);
                        self.lanes[next.0][next_lane as usize].push_back(key);
                        self.close_event(key, next_t);
                        let event = self.trace.len();
                        let next_edge = self.net.edge(next);
                        // The part of the step spent on a slower edge is driven at its limit.
                        let slowdown = (next_edge.speed_limit / new_speed).min(1.0);
                        let v = &mut self.vehicles[key.0];
                        v.route_pos += 1;
                        v.lane = next_lane;
                        v.position = (overshoot * slowdown).min(next_edge.length);
                        v.speed = new_speed.min(next_edge.speed_limit);
                        v.open_event = Some(event);
                        self.trace.push(TraceEvent {
                            vehicle_id: v.id.clone(),
                            edge: next,
                            entry_time: next_t,
                            exit_time: None,
                        });
                    } else {
                        let v = &mut self.vehicles[key.0];
                        v.speed = (edge_len - old_pos) / dt;
                        v.position = edge_len;
                        self.stats.blocked_at_edge_end += 1;
                        i += 1;
                    }
                }
            }
        }

        self.now = next_t;
        self.stats.steps += 1;
        self.insert_pending();
        self.audit();
    }

    fn close_event(&mut self, key: VehicleKey, t: u64) {
        if let Some(ev) = self.vehicles[key.0].open_event.take() {
            self.trace[ev].exit_time = Some(t);
        }
    }

    /// Checks headway, speed, position and conservation invariants and
    /// records violations in the stats.
    fn audit(&mut self) {
        let len = self.config.vehicle_length;
        let min_gap = self.config.min_gap;
        let mut on_lanes = 0usize;
        for (ei, lanes) in self.lanes.iter().enumerate() {
            let edge = self.net.edge(EdgeIdx(ei));
            for q in lanes {
                on_lanes += q.len();
                for (j, &k) in q.iter().enumerate() {
                    let v = &self.vehicles[k.0];
                    if v.position < -POSITION_EPS || v.position > edge.length + POSITION_EPS {
                        self.stats.position_violations += 1;
                    }
                    if v.speed < 0.0
                        || v.speed > edge.speed_limit.min(v.max_speed_cap) + POSITION_EPS
                    {
                        self.stats.speed_violations += 1;
                    }
                    if j > 0 {
                        let leader = &self.vehicles[q[j - 1].0];
                        if leader.position - len - v.position < min_gap - POSITION_EPS {
                            self.stats.gap_violations += 1;
                        }
                    }
                }
            }
        }
        if on_lanes != self.active || self.stats.inserted != self.stats.arrived + self.active as u64
        {
            self.stats.conservation_violations += 1;
        }
    }

    /// Reports from every active N-MCS user, stamped with the current time.
    pub fn emit_reports(&self) -> Vec<Report> {
        self.reports_from(Role::NmcsUser)
    }

    pub fn reports_from(&self, role: Role) -> Vec<Report> {
        self.vehicles
            .iter()
            .filter(|v| v.is_active() && v.role == role)
            .map(|v| Report {
                id: v.id.clone(),
                edge: v.current_edge(),
                speed: v.speed,
                t: self.now,
            })
            .collect()
    }

    /// Replaces the part of the route after the current edge.
    pub fn replace_route_suffix(
        &mut self,
        key: VehicleKey,
        suffix: Vec<EdgeIdx>,
    ) -> Result<(), SimError> {
        let v = &self.vehicles[key.0];
        let mut route = v.route[..=v.route_pos].to_vec();
        route.extend(suffix);
        if route.last() != Some(&v.destination) {
            return Err(SimError::InvalidRoute(
                v.id.to_string(),
                "does not end at the destination".into(),
            ));
        }
        self.check_route(&v.id, &route)?;
        self.vehicles[key.0].route = route;
        Ok(())
    }
}
