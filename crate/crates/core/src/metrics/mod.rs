//! Impact metrics over a paired baseline and attack run.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::adversary::{AttackError, AttackSpec, SybilSummary};
use crate::experiment::RunArtifacts;
use crate::mobility::{Role, TraceEvent};
use crate::network::{EdgeIdx, RoadNetwork};

pub type VehicleSet = BTreeSet<Arc<str>>;

/// N-MCS users that entered a target during the closed period `[from, to]`
/// of the baseline run.
pub fn affected_users(
    baseline: &RunArtifacts,
    targets: &[EdgeIdx],
    from: u64,
    to: u64,
) -> VehicleSet {
    users_entering(baseline, targets, from, to)
}

fn users_entering(run: &RunArtifacts, targets: &[EdgeIdx], from: u64, to: u64) -> VehicleSet {
    run.traces
        .iter()
        .filter(|ev| targets.contains(&ev.edge) && ev.entry_time >= from && ev.entry_time <= to)
        .filter(|ev| {
            run.vehicle(&ev.vehicle_id)
                .is_some_and(|v| v.role == Role::NmcsUser)
        })
        .map(|ev| ev.vehicle_id.clone())
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Classification {
    pub did_enter: VehicleSet,
    pub did_not_enter: VehicleSet,
    /// Affected users that never departed in the attack run.
    pub missing: VehicleSet,
}

/// Splits the affected users by whether they still entered a target during
/// the attack period of the attack run.
pub fn classify(
    affected: &VehicleSet,
    attack_run: &RunArtifacts,
    targets: &[EdgeIdx],
    from: u64,
    to: u64,
) -> Classification {
    let entered = users_entering(attack_run, targets, from, to);
    let mut out = Classification::default();
    for id in affected {
        let present = attack_run
            .vehicle(id)
            .is_some_and(|v| v.inserted_at.is_some());
        if !present {
            warn!(vehicle = %id, "affected vehicle absent from the attack run");
            out.missing.insert(id.clone());
        } else if entered.contains(id) {
            out.did_enter.insert(id.clone());
        } else {
            out.did_not_enter.insert(id.clone());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start_edge: EdgeIdx,
    pub end_edge: EdgeIdx,
    /// No shared edge before the first target: the origin edge was used.
    pub start_fallback: bool,
    /// No shared edge after the last target: the destination edge was used.
    pub end_fallback: bool,
}

impl Segment {
    pub fn is_fallback(&self) -> bool {
        self.start_fallback || self.end_fallback
    }
}

/// The part of the baseline route where the two runs differ, bounded by the
/// nearest edges both routes share around the target(s). `None` when the
/// baseline route contains no target.
pub fn divergence_segment(
    route_base: &[EdgeIdx],
    route_attack: &[EdgeIdx],
    targets: &[EdgeIdx],
) -> Option<Segment> {
    let first = route_base.iter().position(|e| targets.contains(e))?;
    let last = route_base.iter().rposition(|e| targets.contains(e))?;
    let shared = |e: &EdgeIdx| route_attack.contains(e) && !targets.contains(e);
    let before = route_base[..first].iter().rposition(shared);
    let after = route_base[last + 1..]
        .iter()
        .position(shared)
        .map(|i| last + 1 + i);
    Some(Segment {
        start_edge: route_base[before.unwrap_or(0)],
        end_edge: route_base[after.unwrap_or(route_base.len() - 1)],
        start_fallback: before.is_none(),
        end_fallback: after.is_none(),
    })
}

/// Events of a vehicle from the segment start edge through the end edge.
fn segment_events<'a>(
    run: &'a RunArtifacts,
    vehicle: &str,
    segment: Option<&Segment>,
) -> Option<Vec<&'a TraceEvent>> {
    let events = run.events_of(vehicle);
    if events.is_empty() {
        return None;
    }
    let (lo, hi) = match segment {
        None => (0, events.len() - 1),
        Some(s) => {
            let lo = events.iter().position(|e| e.edge == s.start_edge)?;
            let hi = events.iter().position(|e| e.edge == s.end_edge)?;
            (lo, hi)
        }
    };
    if hi < lo {
        return None;
    }
    Some(events[lo..=hi].to_vec())
}

/// Exit time of the last edge minus entry time of the first, over the whole
/// trip or a segment. `None` if the trip or segment was not completed.
pub fn travel_time(run: &RunArtifacts, vehicle: &str, segment: Option<&Segment>) -> Option<f64> {
    let events = segment_events(run, vehicle, segment)?;
    let exit = events.last()?.exit_time?;
    Some((exit - events.first()?.entry_time) as f64)
}

/// Travel time minus the free-flow time of the edges actually driven.
///
/// Entry times are stamped at whole seconds, after the vehicle has already
/// covered part of the first edge, so a segment can appear marginally faster
/// than free flow; the result is floored at zero.
pub fn time_loss(
    net: &RoadNetwork,
    run: &RunArtifacts,
    vehicle: &str,
    segment: Option<&Segment>,
) -> Option<f64> {
    let events = segment_events(run, vehicle, segment)?;
    let exit = events.last()?.exit_time?;
    let actual = (exit - events.first()?.entry_time) as f64;
    let optimum: f64 = events
        .iter()
        .map(|e| net.edge(e.edge).free_flow_time())
        .sum();
    Some((actual - optimum).max(0.0))
}

/// Share of affected users that avoided the target(s); `None` with no
/// affected users.
pub fn sample_ratio(did_not_enter: usize, did_enter: usize) -> Option<f64> {
    let total = did_not_enter + did_enter;
    (total > 0).then(|| did_not_enter as f64 / total as f64)
}

/// Per edge: entries by `vehicles` in the attack run minus their entries in
/// the baseline, counting entries within `[from, to]`. Edges with no change
/// are included with zero.
pub fn flow_delta(
    net: &RoadNetwork,
    baseline: &RunArtifacts,
    attack_run: &RunArtifacts,
    vehicles: &VehicleSet,
    from: u64,
    to: u64,
) -> BTreeMap<String, i64> {
    let mut delta: Vec<i64> = vec![0; net.edge_count()];
    for (run, sign) in [(attack_run, 1), (baseline, -1)] {
        for ev in &run.traces {
            if ev.entry_time >= from && ev.entry_time <= to && vehicles.contains(&ev.vehicle_id) {
                delta[ev.edge.0] += sign;
            }
        }
    }
    net.edge_indices()
        .map(|e| (net.edge(e).id.clone(), delta[e.0]))
        .collect()
}

pub fn percent_change(base: f64, attack: f64) -> Option<f64> {
    (base > 0.0).then(|| (attack - base) / base * 100.0)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImpactSet {
    DidEnter,
    DidNotEnter,
}

impl ImpactSet {
    pub fn as_str(self) -> &'static str {
        match self {
            ImpactSet::DidEnter => "did-enter",
            ImpactSet::DidNotEnter => "did-not-enter",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleImpact {
    pub vehicle_id: String,
    pub set: ImpactSet,
    pub travel_time_base: f64,
    pub travel_time_attack: f64,
    pub time_loss_base: f64,
    pub time_loss_attack: f64,
    pub segment_fallback: bool,
}

impl VehicleImpact {
    pub fn travel_time_change_pct(&self) -> Option<f64> {
        percent_change(self.travel_time_base, self.travel_time_attack)
    }

    pub fn time_loss_change_pct(&self) -> Option<f64> {
        percent_change(self.time_loss_base, self.time_loss_attack)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactReport {
    pub baseline_run: String,
    pub attack_run: String,
    pub attack: AttackSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sybils: Option<SybilSummary>,
    pub affected: Vec<String>,
    pub did_enter: Vec<String>,
    pub did_not_enter: Vec<String>,
    pub missing: Vec<String>,
    pub sample_ratio: Option<f64>,
    /// Affected users excluded from time metrics for an unfinished trip or segment.
    pub unfinished: u64,
    pub segment_fallbacks: u64,
    pub median_travel_time_change_pct: Option<f64>,
    pub median_time_loss_change_pct: Option<f64>,
    pub vehicles: Vec<VehicleImpact>,
    pub flow_delta: BTreeMap<String, i64>,
}

impl ImpactReport {
    /// Travel-time changes (%) of the Did Not Enter set.
    pub fn did_not_enter_travel_changes(&self) -> Vec<f64> {
        self.changes(VehicleImpact::travel_time_change_pct)
    }

    pub fn did_not_enter_time_loss_changes(&self) -> Vec<f64> {
        self.changes(VehicleImpact::time_loss_change_pct)
    }

    fn changes(&self, f: fn(&VehicleImpact) -> Option<f64>) -> Vec<f64> {
        self.vehicles
            .iter()
            .filter(|v| v.set == ImpactSet::DidNotEnter)
            .filter_map(f)
            .collect()
    }

    /// CSV `vehicle_id,set,travel_time_base,travel_time_attack,time_loss_base,time_loss_attack`.
    pub fn write_vehicles_csv(&self, out: impl Write) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "vehicle_id",
            "set",
            "travel_time_base",
            "travel_time_attack",
            "time_loss_base",
            "time_loss_attack",
        ])?;
        for v in &self.vehicles {
            w.write_record([
                v.vehicle_id.clone(),
                v.set.as_str().to_string(),
                v.travel_time_base.to_string(),
                v.travel_time_attack.to_string(),
                v.time_loss_base.to_string(),
                v.time_loss_attack.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV `edge_id,delta`, omitting unchanged edges.
    pub fn write_flow_csv(&self, out: impl Write) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["edge_id", "delta"])?;
        for (edge, delta) in self.flow_delta.iter().filter(|(_, &d)| d != 0) {
            w.write_record([edge.clone(), delta.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn sorted_ids(set: &VehicleSet) -> Vec<String> {
    set.iter().map(|s| s.to_string()).collect()
}

/// Computes every impact metric for a baseline/attack pair. Did Not Enter
/// users are measured over their divergence segment, Did Enter users over
/// the whole trip.
pub fn impact_report(
    net: &RoadNetwork,
    baseline: &RunArtifacts,
    attack_run: &RunArtifacts,
    spec: &AttackSpec,
) -> Result<ImpactReport, AttackError> {
    let targets = spec.resolve(net)?;
    let (from, to) = (spec.start, spec.end());
    let affected = affected_users(baseline, &targets, from, to);
    let classes = classify(&affected, attack_run, &targets, from, to);

    let mut vehicles = Vec::new();
    let mut unfinished = 0;
    let mut fallbacks = 0;
    for (set, ids) in [
        (ImpactSet::DidEnter, &classes.did_enter),
        (ImpactSet::DidNotEnter, &classes.did_not_enter),
    ] {
        for id in ids {
            let segment = match set {
                ImpactSet::DidEnter => None,
                ImpactSet::DidNotEnter => {
                    let base = baseline.vehicle(id).map(|v| v.route_taken.as_slice());
                    let att = attack_run.vehicle(id).map(|v| v.route_taken.as_slice());
                    match (base, att) {
                        (Some(b), Some(a)) => divergence_segment(b, a, &targets),
                        _ => None,
                    }
                }
            };
            if segment.is_some_and(|s| s.is_fallback()) {
                fallbacks += 1;
            }
            let seg = segment.as_ref();
            let metrics = (
                travel_time(baseline, id, seg),
                travel_time(attack_run, id, seg),
                time_loss(net, baseline, id, seg),
                time_loss(net, attack_run, id, seg),
            );
            match metrics {
                (Some(tb), Some(ta), Some(lb), Some(la)) => vehicles.push(VehicleImpact {
                    vehicle_id: id.to_string(),
                    set,
                    travel_time_base: tb,
                    travel_time_attack: ta,
                    time_loss_base: lb,
                    time_loss_attack: la,
                    segment_fallback: segment.is_some_and(|s| s.is_fallback()),
                }),
                _ => unfinished += 1,
            }
        }
    }

    let mut report = ImpactReport {
        baseline_run: baseline.run_id.clone(),
        attack_run: attack_run.run_id.clone(),
        attack: spec.clone(),
        sybils: attack_run.sybils,
        affected: sorted_ids(&affected),
        did_enter: sorted_ids(&classes.did_enter),
        did_not_enter: sorted_ids(&classes.did_not_enter),
        missing: sorted_ids(&classes.missing),
        sample_ratio: sample_ratio(classes.did_not_enter.len(), classes.did_enter.len()),
        unfinished,
        segment_fallbacks: fallbacks,
        median_travel_time_change_pct: None,
        median_time_loss_change_pct: None,
        vehicles,
        flow_delta: flow_delta(net, baseline, attack_run, &affected, from, to),
    };
    report.median_travel_time_change_pct = median(&report.did_not_enter_travel_changes());
    report.median_time_loss_change_pct = median(&report.did_not_enter_time_loss_changes());
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AggregateKey {
    pub target: String,
    pub duration: u64,
    pub profile: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    #[serde(flatten)]
    pub key: AggregateKey,
    pub reports: usize,
    /// Reports whose Did Not Enter set was empty.
    pub excluded_empty: usize,
    pub samples: usize,
    pub median_travel_time_change_pct: Option<f64>,
    pub median_time_loss_change_pct: Option<f64>,
    pub mean_sample_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub rows: Vec<AggregateRow>,
    /// Mean travel-time change over all attacks, each weighted by its
    /// number of Did Not Enter users.
    pub weighted_mean_travel_time_change_pct: Option<f64>,
    pub samples: usize,
}

/// Medians of the Did Not Enter changes per key over the concatenated
/// per-vehicle values of all reports sharing that key.
pub fn aggregate(reports: &[(AggregateKey, &ImpactReport)]) -> AggregateSummary {
    let mut groups: BTreeMap<&AggregateKey, Vec<&ImpactReport>> = BTreeMap::new();
    for (key, r) in reports {
        groups.entry(key).or_default().push(r);
    }
    let mut rows = Vec::new();
    let mut weighted = 0.0;
    let mut weight = 0usize;
    for (key, group) in groups {
        let mut travel = Vec::new();
        let mut loss = Vec::new();
        let mut excluded = 0;
        let mut ratios = Vec::new();
        for r in &group {
            let t = r.did_not_enter_travel_changes();
            if r.did_not_enter.is_empty() {
                excluded += 1;
            }
            weighted += t.iter().sum::<f64>();
            weight += t.len();
            travel.extend(t);
            loss.extend(r.did_not_enter_time_loss_changes());
            ratios.extend(r.sample_ratio);
        }
        rows.push(AggregateRow {
            key: key.clone(),
            reports: group.len(),
            excluded_empty: excluded,
            samples: travel.len(),
            median_travel_time_change_pct: median(&travel),
            median_time_loss_change_pct: median(&loss),
            mean_sample_ratio: (!ratios.is_empty())
                .then(|| ratios.iter().sum::<f64>() / ratios.len() as f64),
        });
    }
    AggregateSummary {
        rows,
        weighted_mean_travel_time_change_pct: (weight > 0).then(|| weighted / weight as f64),
        samples: weight,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{RunStats, VehicleRecord};
    use crate::network::fixtures::net_from;

    fn ev(id: &str, edge: usize, entry: u64, exit: Option<u64>) -> TraceEvent {
        TraceEvent {
            vehicle_id: id.into(),
            edge: EdgeIdx(edge),
            entry_time: entry,
            exit_time: exit,
        }
    }

    fn run(id: &str, traces: Vec<TraceEvent>, roles: &[(&str, Role)]) -> RunArtifacts {
        let vehicles = roles
            .iter()
            .map(|&(v, role)| {
                let events: Vec<&TraceEvent> =
                    traces.iter().filter(|e| &*e.vehicle_id == v).collect();
                VehicleRecord {
                    id: v.into(),
                    role,
                    depart: 0,
                    inserted_at: events.first().map(|e| e.entry_time),
                    arrived_at: events.last().and_then(|e| e.exit_time),
                    route_taken: events.iter().map(|e| e.edge).collect(),
                }
            })
            .collect();
        RunArtifacts::new(
            id.into(),
            0,
            None,
            None,
            traces,
            vehicles,
            RunStats::default(),
            Vec::new(),
        )
    }

    fn set(ids: &[&str]) -> VehicleSet {
        ids.iter().map(|&s| Arc::from(s)).collect()
    }

    #[test]
    fn affected_window_is_closed() {
        let base = run(
            "b",
            vec![
                ev("a", 0, 101, Some(110)),
                ev("b", 0, 150, Some(160)),
                ev("c", 0, 151, Some(160)),
            ],
            &[
                ("a", Role::NmcsUser),
                ("b", Role::NmcsUser),
                ("c", Role::NmcsUser),
            ],
        );
        assert_eq!(
            affected_users(&base, &[EdgeIdx(0)], 100, 150),
            set(&["a", "b"])
        );
        assert!(affected_users(&base, &[EdgeIdx(1)], 100, 150).is_empty());
    }

    #[test]
    fn non_users_never_affected() {
        let base = run(
            "b",
            vec![ev("x", 0, 120, Some(130))],
            &[("x", Role::BenignNonUser)],
        );
        assert!(affected_users(&base, &[EdgeIdx(0)], 100, 150).is_empty());
    }

    #[test]
    fn classification_partitions_affected() {
        let attack = run(
            "a",
            vec![ev("a", 0, 120, Some(130)), ev("b", 1, 120, Some(130))],
            &[
                ("a", Role::NmcsUser),
                ("b", Role::NmcsUser),
                ("c", Role::NmcsUser),
            ],
        );
        let affected = set(&["a", "b", "c"]);
        let c = classify(&affected, &attack, &[EdgeIdx(0)], 100, 150);
        assert_eq!(c.did_enter, set(&["a"]));
        assert_eq!(c.did_not_enter, set(&["b"]));
        assert_eq!(c.missing, set(&["c"]));
        assert_eq!(
            c.did_enter.len() + c.did_not_enter.len() + c.missing.len(),
            affected.len()
        );
    }

    #[test]
    fn segment_on_diamond_detour() {
        // S-A, A-B, B-D (target), D-T vs S-A, A-C, C-D, D-T
        let e = |i| EdgeIdx(i);
        let base = [e(0), e(1), e(2), e(5)];
        let attack = [e(0), e(3), e(4), e(5)];
        let s = divergence_segment(&base, &attack, &[e(2)]).unwrap();
        assert_eq!((s.start_edge, s.end_edge), (e(0), e(5)));
        assert!(!s.is_fallback());
    }

    #[test]
    fn segment_identical_routes_adjacent_to_target() {
        let e = |i| EdgeIdx(i);
        let route = [e(0), e(1), e(2), e(3)];
        let s = divergence_segment(&route, &route, &[e(2)]).unwrap();
        assert_eq!((s.start_edge, s.end_edge), (e(1), e(3)));
    }

    #[test]
    fn segment_fallbacks() {
        let e = |i| EdgeIdx(i);
        let s = divergence_segment(&[e(0), e(1), e(2)], &[e(7), e(8)], &[e(1)]).unwrap();
        assert_eq!((s.start_edge, s.end_edge), (e(0), e(2)));
        assert!(s.start_fallback && s.end_fallback);
        assert!(divergence_segment(&[e(0)], &[e(0)], &[e(1)]).is_none());
    }

    #[test]
    fn travel_time_and_loss_on_segments() {
        let net = net_from(&[("AB", "A", "B"), ("BC", "B", "C"), ("CD", "C", "D")]);
        let r = run(
            "r",
            vec![
                ev("v", 0, 0, Some(12)),
                ev("v", 1, 12, Some(40)),
                ev("v", 2, 40, Some(52)),
            ],
            &[("v", Role::NmcsUser)],
        );
        assert_eq!(travel_time(&r, "v", None), Some(52.0));
        // fixture edges: 10 m at 1 m/s
        assert_eq!(time_loss(&net, &r, "v", None), Some(22.0));
        let seg = Segment {
            start_edge: EdgeIdx(1),
            end_edge: EdgeIdx(1),
            start_fallback: false,
            end_fallback: false,
        };
        assert_eq!(travel_time(&r, "v", Some(&seg)), Some(28.0));
        assert_eq!(time_loss(&net, &r, "v", Some(&seg)), Some(18.0));
        let open = run("o", vec![ev("w", 0, 0, None)], &[("w", Role::NmcsUser)]);
        assert_eq!(travel_time(&open, "w", None), None);
    }

    #[test]
    fn ratio_cases() {
        assert_eq!(sample_ratio(3, 1), Some(0.75));
        assert_eq!(sample_ratio(0, 4), Some(0.0));
        assert_eq!(sample_ratio(0, 0), None);
    }

    #[test]
    fn flow_delta_on_detour() {
        let net = net_from(&[
            ("AB", "A", "B"),
            ("BD", "B", "D"),
            ("AC", "A", "C"),
            ("CD", "C", "D"),
        ]);
        let roles = [("v", Role::NmcsUser)];
        let base = run(
            "b",
            vec![ev("v", 0, 10, Some(20)), ev("v", 1, 20, Some(30))],
            &roles,
        );
        let attack = run(
            "a",
            vec![ev("v", 2, 10, Some(20)), ev("v", 3, 20, Some(30))],
            &roles,
        );
        let d = flow_delta(&net, &base, &attack, &set(&["v"]), 0, 100);
        assert_eq!(d["AB"], -1);
        assert_eq!(d["BD"], -1);
        assert_eq!(d["AC"], 1);
        assert_eq!(d["CD"], 1);
        let same = flow_delta(&net, &base, &base, &set(&["v"]), 0, 100);
        assert!(same.values().all(|&x| x == 0));
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[4.0]), Some(4.0));
        assert_eq!(median(&[30.0, -10.0, 10.0]), Some(10.0));
        assert_eq!(median(&[]), None);
    }
}
