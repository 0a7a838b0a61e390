//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use fogstore_core::placement::place_replicas;
use fogstore_core::store::{required_acks, Completion, OpKind, QueryKind};
use fogstore_core::testkit::{random_schedule, random_topology, star6, STAR6_SETTINGS};
use fogstore_core::topology::{geo_distance, GeoPoint, Topology};
use fogstore_core::workload::{closed_loop_ops, percentile};
use fogstore_core::{ClientContext, ConsistencyLevel, DataContext, FogStore, Query, RegionSpecs, StoreConfig};
use fogstore_sim::{presets, render_csv, Experiment, ExperimentConfig, Overrides};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ConsistencyLevel::*;

type Outcome = Result<String, String>;

const OPS: usize = 10_000;
const SEED: u64 = 42;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn quorum_arithmetic() -> Outcome {
    for (level, want) in [(One, 1), (Two, 2), (Quorum, 3), (All, 5)] {
        let got = required_acks(level, 5).map_err(|e| e.to_string())?;
        ensure(got == want, || {
            format!("required_acks({level}, 5) = {got}, want {want}")
        })?;
    }
    Ok("ONE=1 TWO=2 QUORUM=3 ALL=5 at rf 5".into())
}

/// p50 per (setting, level, direction) parsed back from the CSV.
fn p50_table(csv: &str) -> Result<BTreeMap<(String, String, String), f64>, String> {
    let mut table = BTreeMap::new();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        ensure(f.len() == 10, || format!("bad row `{line}`"))?;
        let p50 = f[5].parse().map_err(|_| format!("bad p50 in `{line}`"))?;
        table.insert((f[0].to_owned(), f[1].to_owned(), f[2].to_owned()), p50);
    }
    Ok(table)
}

fn run_sweep() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    presets::write_paper_configs(dir.path(), OPS, SEED).map_err(|e| e.to_string())?;
    let cfg = ExperimentConfig::load(dir.path().join("latency-sweep.json")).map_err(|e| e.to_string())?;
    let overrides = Overrides {
        seed: Some(SEED),
        ops: Some(OPS),
    };
    let exp = Experiment::load(&cfg, true, overrides).map_err(|e| e.to_string())?;
    let reports = exp.run(false).map_err(|e| e.to_string())?;
    let failed: usize = reports.iter().map(|r| r.failed).sum();
    ensure(failed == 0, || format!("{failed} queries failed"))?;
    Ok(render_csv(&reports))
}

fn level_ordering(csv: &str, elapsed_s: f64) -> Outcome {
    let t = p50_table(csv)?;
    ensure(t.len() == 24, || format!("expected 24 rows, got {}", t.len()))?;
    let mut gaps = Vec::new();
    for setting in presets::STAR_SETTINGS {
        for dir in ["read", "write"] {
            let p = |l: &str| t[&(setting.to_owned(), l.to_owned(), dir.to_owned())];
            let (one, two, quorum, all) = (p("ONE"), p("TWO"), p("QUORUM"), p("ALL"));
            let cell = format!("{setting}/{dir}: ONE={one} TWO={two} QUORUM={quorum} ALL={all}");
            ensure(two - one >= 1.0, || format!("{cell}: ONE not below TWO by 1 ms"))?;
            ensure(two <= quorum && quorum <= all, || format!("{cell}: not monotone"))?;
            ensure((two - one) - (quorum - two) >= 1.0, || {
                format!("{cell}: ONE-TWO gap does not exceed TWO-QUORUM gap by 1 ms")
            })?;
            gaps.push(format!("{setting}/{dir} {one}<{two}<={quorum}<={all}"));
        }
    }
    ensure(elapsed_s < 60.0, || format!("sweep took {elapsed_s:.1} s"))?;
    Ok(format!("{} ({elapsed_s:.1} s)", gaps.join("; ")))
}

fn latency_sensitivity(csv: &str) -> Outcome {
    let t = p50_table(csv)?;
    let mut notes = Vec::new();
    for dir in ["read", "write"] {
        let p = |s: &str, l: &str| t[&(s.to_owned(), l.to_owned(), dir.to_owned())];
        let all = p("star6-high", "ALL") - p("star6-low", "ALL");
        let one = p("star6-high", "ONE") - p("star6-low", "ONE");
        ensure(all > one, || format!("{dir}: ALL grew {all} ms, ONE grew {one} ms"))?;
        notes.push(format!("{dir}: ALL +{all} ms vs ONE +{one} ms"));
    }
    Ok(notes.join("; "))
}

fn spot_checks() -> Outcome {
    let mut store = FogStore::new(
        Arc::new(star6(STAR6_SETTINGS[0].1)),
        RegionSpecs::fixed(One, One),
        StoreConfig::with_replication_factor(5),
    );
    store.register_client("c", "client").map_err(|e| e.to_string())?;
    let ctx = ClientContext::new("c", GeoPoint::new(0.0, 0.0));
    store
        .execute_at(Query::create("k", vec![1], ctx.clone(), DataContext::at(0.0, 0.0)), All)
        .map_err(|e| e.to_string())?;
    store.run_until_quiescent(1e9).map_err(|e| e.to_string())?;
    let coord = store
        .cluster()
        .coordinator_for(store.cluster().topology().ix("client").unwrap());
    let n1 = store.cluster().topology().ix("n1").ok();
    ensure(coord == n1, || "coordinator is not the 4 ms node".into())?;
    let one = store
        .execute_at(Query::read("k", ctx.clone()), One)
        .map_err(|e| e.to_string())?;
    let all = store
        .execute_at(Query::read("k", ctx), All)
        .map_err(|e| e.to_string())?;
    ensure(one.latency_ms.to_bits() == 10f64.to_bits(), || {
        format!("ONE read took {} ms", one.latency_ms)
    })?;
    ensure(all.latency_ms.to_bits() == 34f64.to_bits(), || {
        format!("ALL read took {} ms", all.latency_ms)
    })?;
    Ok("ONE read 10 ms, ALL read 34 ms".into())
}

fn closest_by_scan(topo: &Topology, at: GeoPoint) -> Option<usize> {
    (0..topo.len()).filter(|&i| topo.node(i).is_storage).min_by(|&a, &b| {
        geo_distance(topo.node(a).geo, at)
            .total_cmp(&geo_distance(topo.node(b).geo, at))
            .then_with(|| topo.node(a).id.cmp(&topo.node(b).id))
    })
}

fn placement_properties() -> Outcome {
    let mut spread_checked = 0;
    for seed in 0..500u64 {
        let topo = random_topology(seed, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rf = rng.random_range(1..=5);
        let at = GeoPoint::new(rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0));
        let map = place_replicas("k", at, &topo, rf).map_err(|e| e.to_string())?;
        let again = place_replicas("k", at, &random_topology(seed, 12), rf).map_err(|e| e.to_string())?;
        ensure(map == again, || format!("seed {seed}: placement not deterministic"))?;
        ensure(Some(map.primary()) == closest_by_scan(&topo, at), || {
            format!("seed {seed}: first replica is not the closest storage node")
        })?;
        let storage_groups: BTreeSet<&str> = (0..topo.len())
            .filter(|&i| topo.node(i).is_storage)
            .map(|i| topo.node(i).failure_group.as_str())
            .collect();
        if storage_groups.len() >= rf {
            let used: BTreeSet<&str> = map
                .replicas
                .iter()
                .map(|&r| topo.node(r).failure_group.as_str())
                .collect();
            ensure(used.len() == rf && map.replicas.len() == rf && !map.degraded, || {
                format!("seed {seed}: {rf} replicas share failure groups")
            })?;
            spread_checked += 1;
        }
    }
    Ok(format!("500 topologies, {spread_checked} with enough groups"))
}

fn quorum_intersection() -> Outcome {
    let mut reads = 0;
    for seed in 0..1000 {
        let sched = random_schedule(seed);
        let rf = sched.replication_factor;
        let mut store = FogStore::new(
            Arc::new(sched.topology.clone()),
            RegionSpecs::fixed(One, One),
            StoreConfig::with_replication_factor(rf),
        );
        for (id, attach) in &sched.clients {
            store.register_client(id, attach).map_err(|e| e.to_string())?;
        }
        for op in &sched.ops {
            store.schedule_at(op.at_ms, op.query.clone(), Some(op.level));
        }
        store.run_until_quiescent(1e9).map_err(|e| e.to_string())?;
        let level_of = |c: &Completion| {
            sched
                .ops
                .iter()
                .find(|o| o.query.key == c.key && o.query.kind == c.kind && o.at_ms == c.issued_at_ms)
                .map(|o| o.level)
                .expect("completion matches a scheduled op")
        };
        let done = store.take_completions();
        for read in done.iter().filter(|c| c.kind == QueryKind::Read) {
            let Ok(seen) = &read.outcome else { continue };
            reads += 1;
            let r = required_acks(level_of(read), rf).unwrap();
            for write in done.iter().filter(|c| c.kind != QueryKind::Read && c.key == read.key) {
                let Ok(written) = &write.outcome else { continue };
                let w = required_acks(level_of(write), rf).unwrap();
                let stale = seen.version < written.version;
                ensure(
                    !(r + w > rf && write.completed_at_ms <= read.issued_at_ms && stale),
                    || format!("seed {seed}: read {} missed write {}", read.req, write.req),
                )?;
            }
        }
    }
    Ok(format!("1000 schedules, {reads} reads, 0 violations"))
}

fn differential_mapping() -> Outcome {
    let mut notes = Vec::new();
    for (setting, links) in STAR6_SETTINGS {
        let mut store = FogStore::new(
            Arc::new(star6(links)),
            presets::traffic_regions(),
            StoreConfig::with_replication_factor(5),
        );
        let workload = presets::traffic_workload(OPS, SEED);
        for c in &workload.client_positions {
            store
                .register_client(&c.client_id, c.attach.as_deref().unwrap())
                .map_err(|e| e.to_string())?;
        }
        let ops = closed_loop_ops(&workload).map_err(|e| e.to_string())?;
        let done = store.run_closed_loop(ops, 1e9).map_err(|e| e.to_string())?;
        let mut by_client: BTreeMap<&str, (BTreeSet<ConsistencyLevel>, Vec<f64>)> = BTreeMap::new();
        for c in done.iter().filter(|c| c.kind.op_kind() == Some(OpKind::Read)) {
            let r = c.outcome.as_ref().map_err(|e| e.to_string())?;
            let entry = by_client.entry(c.client_id.as_str()).or_default();
            entry.0.insert(r.level_used);
            entry.1.push(r.latency_ms);
        }
        let mut p50 = BTreeMap::new();
        for (client, want) in [("near", All), ("far", One)] {
            let (levels, lat) = by_client
                .get_mut(client)
                .ok_or(format!("{setting}: no reads from {client}"))?;
            ensure(*levels == BTreeSet::from([want]), || {
                format!("{setting}: {client} client read at {levels:?}, want {want}")
            })?;
            lat.sort_by(f64::total_cmp);
            p50.insert(client, percentile(lat, 50.0).map_err(|e| e.to_string())?);
        }
        ensure(p50["far"] < p50["near"], || {
            format!("{setting}: far p50 {} not below near p50 {}", p50["far"], p50["near"])
        })?;
        notes.push(format!(
            "{setting} 300 m ALL p50 {} / 800 m ONE p50 {}",
            p50["near"], p50["far"]
        ));
    }
    Ok(notes.join("; "))
}

fn main() -> ExitCode {
    let started = Instant::now();
    let first = run_sweep();
    let sweep_s = started.elapsed().as_secs_f64();
    let second = run_sweep();

    let from_sweep = |f: &dyn Fn(&str) -> Outcome| match &first {
        Ok(csv) => f(csv),
        Err(e) => Err(format!("sweep failed: {e}")),
    };
    let results: Vec<(&str, Outcome)> = vec![
        ("1 quorum arithmetic", quorum_arithmetic()),
        (
            "2 level ordering across settings",
            from_sweep(&|csv| level_ordering(csv, sweep_s)),
        ),
        ("3 latency sensitivity of ALL vs ONE", from_sweep(&latency_sensitivity)),
        ("4 closed-form latency spot checks", spot_checks()),
        ("5 placement properties", placement_properties()),
        ("6 quorum intersection", quorum_intersection()),
        ("7 differential consistency mapping", differential_mapping()),
        (
            "8 deterministic sweep output",
            match (&first, &second) {
                (Ok(a), Ok(b)) if a.as_bytes() == b.as_bytes() => Ok(format!("{} identical bytes", a.len())),
                (Ok(_), Ok(_)) => Err("sweep outputs differ".into()),
                (Err(e), _) | (_, Err(e)) => Err(format!("sweep failed: {e}")),
            },
        ),
    ];

    let mut all_pass = true;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                all_pass = false;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
