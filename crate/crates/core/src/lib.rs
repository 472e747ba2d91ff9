//! Co-simulation of a crowdsensed navigation service under Sybil report
//! falsification.
//!
//! The crate is organised by subsystem:
//!
//! * [`network`]: road graph, routing, betweenness and target ranking.
//! * [`mobility`]: discrete-time car-following simulation and demand.
//! * [`server`]: report ingestion, sliding-window speed estimation, rerouting.
//! * [`adversary`]: Sybil presimulation, injection and strength search.
//! * [`metrics`]: impact metrics comparing paired baseline/attack runs.
//! * [`experiment`]: scenario configuration, the lockstep run loop and sweeps.

pub mod adversary;
pub mod experiment;
pub mod metrics;
pub mod mobility;
pub mod network;
pub mod report;
pub mod server;
