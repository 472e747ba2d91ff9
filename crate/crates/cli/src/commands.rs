use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::Args;
use serde::Serialize;

use nmcs_core::adversary::{presimulate, AttackSpec};
use nmcs_core::experiment::{
    run_sweep, simulate, DemandSource, NetworkSource, RunArtifacts, ScenarioConfig, SweepConfig,
};
use nmcs_core::metrics::{impact_report, ImpactReport};
use nmcs_core::mobility::{save_demand, Role};
use nmcs_core::network::{
    betweenness_centrality, load_network, save_network, select_targets, RoadNetwork,
    TargetSelectionConfig,
};

use crate::manifest::Manifest;

const SCENARIO_FILE: &str = "scenario.json";

#[derive(Args)]
#[group(required = true, multiple = false)]
pub struct NetworkArgs {
    /// Scenario config whose network is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Network file (JSON).
    #[arg(long)]
    network: Option<PathBuf>,
}

impl NetworkArgs {
    /// The network and, when it came from a scenario config, that config's hash.
    fn load(&self) -> anyhow::Result<(Arc<RoadNetwork>, Option<String>)> {
        if let Some(path) = &self.config {
            let cfg = load_scenario(path)?;
            return Ok((cfg.build_network()?, Some(cfg.hash())));
        }
        let path = self.network.as_ref().expect("clap requires one source");
        Ok((Arc::new(load_network(path)?), None))
    }
}

/// Loads a scenario and makes its file references absolute so the copy
/// embedded in the outputs stays usable from anywhere.
fn load_scenario(path: &Path) -> anyhow::Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(path)
        .with_context(|| format!("loading scenario {}", path.display()))?;
    absolutize(&mut cfg)?;
    Ok(cfg)
}

fn absolutize(cfg: &mut ScenarioConfig) -> anyhow::Result<()> {
    if let NetworkSource::Path(p) = &mut cfg.network {
        *p = fs::canonicalize(&*p).with_context(|| format!("network file {}", p.display()))?;
    }
    if let DemandSource::Path(p) = &mut cfg.demand {
        *p = fs::canonicalize(&*p).with_context(|| format!("demand file {}", p.display()))?;
    }
    Ok(())
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_file(path: &Path) -> anyhow::Result<std::io::BufWriter<fs::File>> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(std::io::BufWriter::new(file))
}

pub fn generate(
    config: &Path,
    seed: Option<u64>,
    penetration: Option<f64>,
    out: &Path,
) -> anyhow::Result<()> {
    let mut cfg = load_scenario(config)?;
    if let Some(seed) = seed {
        cfg.set_seed(seed);
    }
    if let Some(rate) = penetration {
        cfg.penetration_rate = rate;
    }
    cfg.validate()?;
    let net = cfg.build_network()?;
    let demand = cfg.build_demand(&net)?;
    create_dir(out)?;

    let mut manifest = Manifest::new("generate");
    manifest.config_hash = Some(cfg.hash());
    manifest.seed = Some(cfg.seed());
    save_network(&net, out.join("network.json"))?;
    manifest.add("network.json");
    save_demand(out.join("demand.json"), &demand)?;
    manifest.add("demand.json");

    let mut materialized = cfg.clone();
    materialized.network = NetworkSource::Path("network.json".into());
    materialized.demand = DemandSource::Path("demand.json".into());
    materialized.output_dir = None;
    write_json(&out.join(SCENARIO_FILE), &materialized)?;
    manifest.add(SCENARIO_FILE);

    let users = demand.iter().filter(|d| d.role == Role::NmcsUser).count();
    manifest.note(format!(
        "{users} of {} vehicles are N-MCS users",
        demand.len()
    ));
    manifest.write(out)?;
    println!(
        "{} nodes, {} edges, {} vehicles ({users} users) -> {}",
        net.node_count(),
        net.edge_count(),
        demand.len(),
        out.display()
    );
    Ok(())
}

pub fn targets(
    source: &NetworkArgs,
    k: usize,
    max_detour: f64,
    od_sample: usize,
    out: &Path,
) -> anyhow::Result<()> {
    let (net, hash) = source.load()?;
    let times = net.free_flow_times();
    let scores = betweenness_centrality(&net, &times);
    let selection_config = TargetSelectionConfig {
        k,
        max_detour_factor: max_detour,
        od_sample_size: od_sample,
    };
    let selection = select_targets(&net, &times, &scores, &selection_config)?;
    create_dir(out)?;

    let mut manifest = Manifest::new("targets");
    manifest.config_hash = hash;
    let mut w = csv::Writer::from_writer(create_file(&out.join("targets.csv"))?);
    w.write_record(["rank", "edge_id", "edge_bc", "median_detour"])?;
    for (rank, c) in selection.selected.iter().enumerate() {
        let id = &net.edge(c.edge).id;
        w.write_record([
            (rank + 1).to_string(),
            id.clone(),
            c.edge_bc.to_string(),
            c.median_detour.to_string(),
        ])?;
        println!(
            "{:>3}  {id:<24} bc {:>12.3}  detour {:.3}",
            rank + 1,
            c.edge_bc,
            c.median_detour
        );
    }
    w.flush()?;
    manifest.add("targets.csv");
    if selection.selected.is_empty() {
        let notice = format!(
            "no edge passed the detour filter ({} candidates rejected); the target list is empty",
            selection.rejected.len()
        );
        eprintln!("notice: {notice}");
        manifest.note(notice);
    }
    manifest.write(out)
}

pub fn run(
    config: &Path,
    seed: Option<u64>,
    attack: Option<&Path>,
    baseline: bool,
    out: &Path,
) -> anyhow::Result<()> {
    let mut cfg = load_scenario(config)?;
    if let Some(seed) = seed {
        cfg.set_seed(seed);
    }
    if baseline {
        cfg.attack = None;
    }
    if let Some(path) = attack {
        cfg.attack = Some(AttackSpec::load(path)?);
    }
    cfg.record_estimates = true;
    let scenario = cfg.resolve()?;
    create_dir(out)?;

    let mut manifest = Manifest::new("run");
    manifest.config_hash = Some(cfg.hash());
    manifest.seed = Some(cfg.seed());
    write_json(&out.join(SCENARIO_FILE), &cfg)?;
    manifest.add(SCENARIO_FILE);

    let artifacts = match &cfg.attack {
        None => scenario.run_baseline()?,
        Some(spec) => {
            let trace = presimulate(&scenario.net, spec, &cfg.sim)?;
            trace.write_csv(&scenario.net, create_file(&out.join("sybil_reports.csv"))?)?;
            manifest.add("sybil_reports.csv");
            fs::write(out.join("sybil_summary.json"), trace.summary_json())?;
            manifest.add("sybil_summary.json");
            simulate(&scenario, Some((spec, &trace)), "attack")?
        }
    };
    for file in artifacts.save(&scenario.net, out)? {
        manifest.add(file);
    }
    let stats = &artifacts.stats;
    if stats.unfinished > 0 {
        manifest.note(format!(
            "{} vehicles unfinished at the horizon",
            stats.unfinished
        ));
    }
    manifest.write(out)?;
    println!(
        "{}: ended at t={} with {} arrived, {} unfinished, {} route changes, {} Sybil reports",
        artifacts.run_id,
        stats.end_time,
        stats.sim.arrived,
        stats.unfinished,
        stats.reroutes.changed,
        stats.sybil_reports_injected
    );
    Ok(())
}

fn write_report(report: &ImpactReport, dir: &Path) -> anyhow::Result<Vec<&'static str>> {
    write_json(&dir.join("report.json"), report)?;
    report.write_vehicles_csv(create_file(&dir.join("vehicles.csv"))?)?;
    report.write_flow_csv(create_file(&dir.join("flow.csv"))?)?;
    Ok(vec!["report.json", "vehicles.csv", "flow.csv"])
}

/// Directory name for a sweep cell.
fn cell_dir_name(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._+-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn sweep(config: &Path, seed: Option<u64>, out: &Path) -> anyhow::Result<()> {
    let mut cfg =
        SweepConfig::load(config).with_context(|| format!("loading sweep {}", config.display()))?;
    absolutize(&mut cfg.scenario)?;
    if let Some(seed) = seed {
        cfg.scenario.set_seed(seed);
    }
    let outcome = run_sweep(&cfg)?;
    create_dir(out)?;

    let mut manifest = Manifest::new("sweep");
    manifest.config_hash = Some(cfg.hash());
    manifest.seed = Some(cfg.scenario.seed());
    write_json(&out.join("sweep.json"), &cfg)?;
    manifest.add("sweep.json");

    let mut index = csv::Writer::from_writer(create_file(&out.join("cells.csv"))?);
    index.write_record([
        "cell",
        "targets",
        "duration",
        "profile",
        "sybil_speed",
        "status",
        "sample_ratio",
        "median_travel_time_change_pct",
        "max_concurrent_sybils",
        "error",
    ])?;
    for result in &outcome.cells {
        let cell = &result.cell;
        let name = cell_dir_name(&cell.label());
        let mut row = vec![
            name.clone(),
            cell.target_label(),
            cell.duration.to_string(),
            cell.profile.clone(),
            cell.sybil_speed.to_string(),
        ];
        match &result.outcome {
            Ok((report, _)) => {
                let dir = out.join("cells").join(&name);
                create_dir(&dir)?;
                for file in write_report(report, &dir)? {
                    manifest.add(format!("cells/{name}/{file}"));
                }
                row.extend([
                    "ok".to_string(),
                    fmt_opt(report.sample_ratio),
                    fmt_opt(report.median_travel_time_change_pct),
                    report
                        .sybils
                        .map_or(String::new(), |s| s.max_concurrent.to_string()),
                    String::new(),
                ]);
            }
            Err(e) => {
                manifest.note(format!("cell {name} failed: {e}"));
                row.extend([
                    "failed".into(),
                    String::new(),
                    String::new(),
                    String::new(),
                    e.clone(),
                ]);
            }
        }
        index.write_record(&row)?;
    }
    index.flush()?;
    manifest.add("cells.csv");
    for (profile, base) in &outcome.baselines {
        if let Err(e) = base {
            manifest.note(format!("baseline {profile} failed: {e}"));
        }
    }
    write_json(&out.join("summary.json"), &outcome.summary)?;
    manifest.add("summary.json");
    manifest.write(out)?;

    for row in &outcome.summary.rows {
        println!(
            "{:<32} {:>5}s {:<15} ratio {:>6}  median dtt {:>8}  n={}",
            row.key.target,
            row.key.duration,
            row.key.profile,
            row.mean_sample_ratio
                .map_or("-".into(), |r| format!("{r:.3}")),
            row.median_travel_time_change_pct
                .map_or("-".into(), |m| format!("{m:+.1}%")),
            row.samples
        );
    }
    let failures = outcome.failures();
    if failures > 0 {
        eprintln!(
            "{failures} of {} cells failed; see {}",
            outcome.cells.len(),
            out.join("cells.csv").display()
        );
    }
    Ok(())
}

pub fn report(
    source: &NetworkArgs,
    baseline: &Path,
    attack: &Path,
    spec: Option<&Path>,
    out: &Path,
) -> anyhow::Result<()> {
    let (net, hash) = source.load()?;
    let base = RunArtifacts::load(&net, baseline)
        .with_context(|| format!("loading baseline run {}", baseline.display()))?;
    let attacked = RunArtifacts::load(&net, attack)
        .with_context(|| format!("loading attack run {}", attack.display()))?;
    let spec = match spec {
        Some(path) => AttackSpec::load(path)?,
        None => match &attacked.attack {
            Some(spec) => spec.clone(),
            None => bail!("{} records no attack; pass --spec", attack.display()),
        },
    };
    let report = impact_report(&net, &base, &attacked, &spec)?;
    create_dir(out)?;

    let mut manifest = Manifest::new("report");
    manifest.config_hash = hash;
    manifest.seed = Some(attacked.seed);
    for file in write_report(&report, out)? {
        manifest.add(file);
    }
    manifest.write(out)?;
    println!(
        "affected {}, did enter {}, did not enter {}, sample ratio {}, median travel-time change {}",
        report.affected.len(),
        report.did_enter.len(),
        report.did_not_enter.len(),
        report.sample_ratio.map_or("-".into(), |r| format!("{r:.3}")),
        report
            .median_travel_time_change_pct
            .map_or("-".into(), |m| format!("{m:+.1}%"))
    );
    Ok(())
}
