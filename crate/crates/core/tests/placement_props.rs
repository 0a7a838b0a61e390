use std::collections::BTreeSet;

use fogstore_core::placement::place_replicas;
use fogstore_core::testkit::random_topology;
use fogstore_core::topology::{geo_distance, GeoPoint, Topology};
use proptest::prelude::*;

fn storage(topo: &Topology) -> Vec<usize> {
    (0..topo.len()).filter(|&i| topo.node(i).is_storage).collect()
}

fn groups_of(topo: &Topology, nodes: &[usize]) -> usize {
    nodes
        .iter()
        .map(|&i| topo.node(i).failure_group.as_str())
        .collect::<BTreeSet<_>>()
        .len()
}

/// Smallest distance, then smallest id, by linear scan.
fn closest_by_scan(topo: &Topology, at: GeoPoint) -> usize {
    let mut cands = storage(topo);
    cands.sort_by(|&a, &b| {
        geo_distance(topo.node(a).geo, at)
            .total_cmp(&geo_distance(topo.node(b).geo, at))
            .then_with(|| topo.node(a).id.cmp(&topo.node(b).id))
    });
    cands[0]
}

/// Most distinct groups any replica set of size `size` containing `primary`
/// can span, by enumerating subsets.
fn best_group_spread(topo: &Topology, primary: usize, size: usize) -> usize {
    let others: Vec<usize> = storage(topo).into_iter().filter(|&i| i != primary).collect();
    let mut best = 0;
    for mask in 0u32..(1 << others.len()) {
        if mask.count_ones() as usize + 1 != size {
            continue;
        }
        let mut set = vec![primary];
        set.extend(
            others
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &n)| n),
        );
        best = best.max(groups_of(topo, &set));
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn placement_matches_oracles(seed in 0u64..10_000, rf in 1usize..=5, x in 0.0f64..1000.0, y in 0.0f64..1000.0) {
        let topo = random_topology(seed, 12);
        let at = GeoPoint::new(x, y);
        let map = place_replicas("k", at, &topo, rf).unwrap();
        let size = rf.min(storage(&topo).len());

        prop_assert_eq!(map.replicas.len(), size);
        prop_assert_eq!(map.primary(), closest_by_scan(&topo, at));
        let distinct: BTreeSet<_> = map.replicas.iter().collect();
        prop_assert_eq!(distinct.len(), size);
        prop_assert!(map.replicas.iter().all(|&r| topo.node(r).is_storage));

        let spread = groups_of(&topo, &map.replicas);
        prop_assert_eq!(spread, best_group_spread(&topo, map.primary(), size));
        prop_assert_eq!(map.degraded, spread < size);

        prop_assert_eq!(place_replicas("k", at, &topo, rf).unwrap(), map);
    }
}
