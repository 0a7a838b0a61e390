//! Generators for the bundled star-topology experiment files.

use std::path::{Path, PathBuf};

use fogstore_core::consistency::{Band, ConsistencyRegionSpec};
use fogstore_core::testkit::{star6, STAR6_SETTINGS};
use fogstore_core::workload::{ClientPosition, WorkloadSpec};
use fogstore_core::{ConsistencyLevel, GeoPoint, RegionSpecs};

use crate::config::{ExperimentConfig, SweepSetting};
use crate::experiment::{write_file, ExperimentError};

pub const STAR_SETTINGS: [&str; 3] = ["star6-low", "star6-medium", "star6-high"];

/// Keyspace governed by the traffic-light regions.
pub const TRAFFIC_KEYSPACE: &str = "tl-";

/// Reads within this distance of a traffic-light record are ALL.
pub const TRAFFIC_RADIUS_M: f64 = 500.0;

/// Writes the three star topologies as `<dir>/<setting>.json`.
pub fn make_paper_topologies(dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    STAR6_SETTINGS
        .iter()
        .map(|(name, links)| {
            let path = dir.join(format!("{name}.json"));
            write_file(&path, &star6(*links).to_json())?;
            Ok(path)
        })
        .collect()
}

fn ycsb_client(id: &str, geo: GeoPoint) -> ClientPosition {
    ClientPosition {
        client_id: id.to_owned(),
        geo,
        weight: 1.0,
        attach: Some("client".to_owned()),
    }
}

/// Read-latest workload for one client attached next to the hub.
pub fn latency_workload(op_count: usize, seed: u64) -> WorkloadSpec {
    let mut spec = WorkloadSpec::single_client(op_count, "ycsb", GeoPoint::new(0.0, 0.0), seed);
    spec.client_positions = vec![ycsb_client("ycsb", GeoPoint::new(0.0, 0.0))];
    spec
}

/// Traffic-light records at the hub read by two equally busy clients, one
/// 300 m and one 800 m away.
pub fn traffic_workload(op_count: usize, seed: u64) -> WorkloadSpec {
    let mut spec = latency_workload(op_count, seed);
    spec.key_prefix = TRAFFIC_KEYSPACE.to_owned();
    spec.client_positions = vec![
        ycsb_client("near", GeoPoint::new(300.0, 0.0)),
        ycsb_client("far", GeoPoint::new(800.0, 0.0)),
    ];
    spec
}

/// Read ALL within [`TRAFFIC_RADIUS_M`] of a traffic-light record, ONE
/// beyond; writes ONE everywhere.
pub fn traffic_regions() -> RegionSpecs {
    use ConsistencyLevel::{All, One};
    let tl = ConsistencyRegionSpec::new(
        TRAFFIC_KEYSPACE,
        vec![
            Band::new(TRAFFIC_RADIUS_M, All, One),
            Band::new(f64::INFINITY, One, One),
        ],
    )
    .expect("bands ascend");
    RegionSpecs::new(vec![tl], ConsistencyRegionSpec::uniform("", One, One)).expect("keyspaces are distinct")
}

fn experiment(workload: &str, regions: Option<&str>, output: &str, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        topology_path: "star6-low.json".into(),
        regions_path: regions.map(PathBuf::from),
        workload_path: workload.into(),
        fault_path: None,
        sweep: STAR_SETTINGS
            .iter()
            .map(|name| SweepSetting {
                name: (*name).to_owned(),
                multiplier: None,
                topology_path: Some(format!("{name}.json").into()),
            })
            .collect(),
        levels: ConsistencyLevel::ALL_LEVELS.to_vec(),
        directions: vec![fogstore_core::OpKind::Read, fogstore_core::OpKind::Write],
        output_path: output.into(),
        seed: Some(seed),
        replication_factor: 5,
        timeout_ms: 10_000.0,
        jitter_ms: 0.0,
        max_sim_ms: 1e9,
    }
}

/// Writes topologies, workloads, regions and the two experiment files
/// (`latency-sweep.json`, `traffic-lights.json`) into `dir`.
pub fn write_paper_configs(dir: &Path, op_count: usize, seed: u64) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut written = make_paper_topologies(dir)?;
    let json = |v: &ExperimentConfig| serde_json::to_string_pretty(v).expect("config serializes");
    let files = [
        ("workload-ycsb-d.json", latency_workload(op_count, seed).to_json()),
        ("workload-traffic.json", traffic_workload(op_count, seed).to_json()),
        ("regions-traffic.json", traffic_regions().to_json()),
        (
            "latency-sweep.json",
            json(&experiment("workload-ycsb-d.json", None, "out/latency-sweep.csv", seed)),
        ),
        (
            "traffic-lights.json",
            json(&experiment(
                "workload-traffic.json",
                Some("regions-traffic.json"),
                "out/traffic-lights.csv",
                seed,
            )),
        ),
    ];
    for (name, text) in files {
        let path = dir.join(name);
        write_file(&path, &text)?;
        written.push(path);
    }
    Ok(written)
}
