use std::sync::Arc;

use fogstore_core::store::{required_acks, Completion, QueryKind};
use fogstore_core::testkit::random_schedule;
use fogstore_core::{ConsistencyLevel, FogStore, RegionSpecs, StoreConfig};

/// Runs schedule `seed` and returns the completions with the level each
/// query asked for.
fn run(seed: u64) -> (usize, Vec<(Completion, ConsistencyLevel)>) {
    let sched = random_schedule(seed);
    let rf = sched.replication_factor;
    let mut store = FogStore::new(
        Arc::new(sched.topology),
        RegionSpecs::fixed(ConsistencyLevel::One, ConsistencyLevel::One),
        StoreConfig::with_replication_factor(rf),
    );
    for (id, attach) in &sched.clients {
        store.register_client(id, attach).unwrap();
    }
    let mut levels = Vec::new();
    for op in &sched.ops {
        levels.push(op.level);
        store.schedule_at(op.at_ms, op.query.clone(), Some(op.level));
    }
    store.run_until_quiescent(1e9).unwrap();
    assert!(store.divergent_keys().is_empty(), "seed {seed} did not converge");
    // requests are numbered in issue order, which differs from schedule order
    let done = store.take_completions();
    assert_eq!(done.len(), sched.ops.len());
    let mut out = Vec::new();
    for c in done {
        let op = sched
            .ops
            .iter()
            .find(|o| o.query.key == c.key && o.query.kind == c.kind && o.at_ms == c.issued_at_ms)
            .expect("completion matches a scheduled op");
        out.push((c, op.level));
    }
    (rf, out)
}

/// Reads that missed a write which completed before they were issued, at
/// levels whose ack counts overlap.
fn violations(rf: usize, done: &[(Completion, ConsistencyLevel)]) -> Vec<String> {
    let mut bad = Vec::new();
    for (read, rl) in done.iter().filter(|(c, _)| c.kind == QueryKind::Read) {
        let Ok(seen) = &read.outcome else { continue };
        for (write, wl) in done
            .iter()
            .filter(|(c, _)| c.kind != QueryKind::Read && c.key == read.key)
        {
            let Ok(written) = &write.outcome else { continue };
            let overlap = required_acks(*rl, rf).unwrap() + required_acks(*wl, rf).unwrap() > rf;
            if overlap && write.completed_at_ms <= read.issued_at_ms && seen.version < written.version {
                bad.push(format!("read {} missed write {}", read.req, write.req));
            }
        }
    }
    bad
}

#[test]
fn overlapping_quorums_see_completed_writes() {
    let mut checked = 0;
    for seed in 0..1000 {
        let (rf, done) = run(seed);
        let bad = violations(rf, &done);
        assert!(bad.is_empty(), "seed {seed}: {bad:?}");
        checked += done
            .iter()
            .filter(|(c, _)| c.kind == QueryKind::Read && c.outcome.is_ok())
            .count();
    }
    assert!(checked > 10_000, "only {checked} reads checked");
}

#[test]
fn weak_levels_can_miss_writes() {
    // the checker is not vacuous: without overlap, stale reads do occur
    let mut stale = 0;
    for seed in 0..300 {
        let (_, done) = run(seed);
        for (read, _) in done.iter().filter(|(c, _)| c.kind == QueryKind::Read) {
            let Ok(seen) = &read.outcome else { continue };
            stale += done
                .iter()
                .filter(|(w, _)| {
                    w.kind != QueryKind::Read && w.key == read.key && w.completed_at_ms <= read.issued_at_ms
                })
                .filter(|(w, _)| w.outcome.as_ref().is_ok_and(|r| seen.version < r.version))
                .count();
        }
    }
    assert!(stale > 0);
}
