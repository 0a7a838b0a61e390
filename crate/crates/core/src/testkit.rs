//! Topology generators for randomized tests and experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::consistency::{ClientContext, ConsistencyLevel, DataContext};
use crate::store::Query;
use crate::topology::{FogNode, GeoPoint, Link, Topology};

/// Storage link latencies of the three star settings, in milliseconds.
pub const STAR6_SETTINGS: [(&str, [f64; 5]); 3] = [
    ("star6-low", [4.0, 5.0, 6.0, 7.0, 8.0]),
    ("star6-medium", [8.0, 10.0, 12.0, 14.0, 16.0]),
    ("star6-high", [12.0, 15.0, 18.0, 21.0, 24.0]),
];

/// Latency between the client attach node and the hub.
pub const STAR6_CLIENT_LINK_MS: f64 = 1.0;

/// A non-storage hub `hub`, storage nodes `n1`..`n5` on links of the given
/// latencies (each in its own failure group) and a non-storage client
/// attach node `client`.
///
/// Storage nodes sit on a 1 km circle around the hub; the client sits at
/// the hub's position.
pub fn star6(storage_links_ms: [f64; 5]) -> Topology {
    let mut nodes = vec![
        FogNode::relay("hub", GeoPoint::new(0.0, 0.0), "core"),
        FogNode::relay("client", GeoPoint::new(0.0, 0.0), "clients"),
    ];
    let mut links = vec![Link::new("client", "hub", STAR6_CLIENT_LINK_MS)];
    for (i, ms) in storage_links_ms.iter().enumerate() {
        let id = format!("n{}", i + 1);
        let angle = i as f64 * std::f64::consts::TAU / 5.0;
        let geo = GeoPoint::new(1000.0 * angle.cos(), 1000.0 * angle.sin());
        nodes.push(FogNode::storage(&id, geo, &format!("g{}", i + 1)));
        links.push(Link::new("hub", &id, *ms));
    }
    Topology::new(nodes, links).expect("star topology is valid")
}

/// A connected random topology with 1 to `max_nodes` nodes.
///
/// Nodes get random positions in a 1 km square, random failure groups and
/// integer link latencies between 1 and 20 ms. At least one node stores
/// data; roughly one in five of the others is a relay.
pub fn random_topology(seed: u64, max_nodes: usize) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_nodes.max(1));
    let groups = rng.random_range(1..=n);
    let nodes: Vec<FogNode> = (0..n)
        .map(|i| {
            let geo = GeoPoint::new(rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0));
            let id = format!("v{i:02}");
            let group = format!("g{}", rng.random_range(0..groups));
            if i > 0 && rng.random_bool(0.2) {
                FogNode::relay(&id, geo, &group)
            } else {
                FogNode::storage(&id, geo, &group)
            }
        })
        .collect();
    let mut links = Vec::new();
    for i in 1..n {
        let j = rng.random_range(0..i);
        links.push(Link::new(&nodes[i].id, &nodes[j].id, rng.random_range(1..=20) as f64));
    }
    for _ in 0..n / 2 {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            links.push(Link::new(&nodes[a].id, &nodes[b].id, rng.random_range(1..=20) as f64));
        }
    }
    Topology::new(nodes, links).expect("generated topology is connected")
}

/// One query of a [`RandomSchedule`], issued at `at_ms`.
#[derive(Debug, Clone)]
pub struct ScheduledOp {
    pub at_ms: f64,
    pub query: Query,
    pub level: ConsistencyLevel,
}

/// Concurrent clients issuing creates, updates, deletes and reads at random
/// levels against a handful of keys.
#[derive(Debug, Clone)]
pub struct RandomSchedule {
    pub topology: Topology,
    pub replication_factor: usize,
    /// Client id and the node it attaches to.
    pub clients: Vec<(String, String)>,
    pub ops: Vec<ScheduledOp>,
}

/// Builds the schedule for `seed`: replication factor 3 or 5 on a random
/// topology with at least that many storage nodes, 2 to 4 clients and 40
/// ops over 4 keys spread across the first 300 ms.
pub fn random_schedule(seed: u64) -> RandomSchedule {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rf = if rng.random_bool(0.5) { 3 } else { 5 };
    let topology = loop {
        let t = random_topology(rng.random(), 12);
        if t.storage_nodes().count() >= rf {
            break t;
        }
    };
    let clients: Vec<(String, String)> = (0..rng.random_range(2..=4))
        .map(|i| {
            let attach = &topology.node(rng.random_range(0..topology.len())).id;
            (format!("c{i}"), attach.clone())
        })
        .collect();
    let keys = 4;
    let mut ops = Vec::new();
    for k in 0..keys {
        let (id, _) = &clients[rng.random_range(0..clients.len())];
        let at = GeoPoint::new(rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0));
        ops.push(ScheduledOp {
            at_ms: 0.0,
            query: Query::create(
                &format!("k{k}"),
                vec![0],
                ClientContext::new(id, at),
                DataContext { data_geo: at },
            ),
            level: ConsistencyLevel::ALL_LEVELS[rng.random_range(0..4)],
        });
    }
    for n in 1..=40u8 {
        let (id, _) = &clients[rng.random_range(0..clients.len())];
        let ctx = ClientContext::new(id, GeoPoint::default());
        let key = format!("k{}", rng.random_range(0..keys));
        let query = match rng.random_range(0..10) {
            0 => Query::delete(&key, ctx),
            1 => Query::create(&key, vec![n], ctx, DataContext::default()),
            2..=4 => Query::update(&key, vec![n], ctx, None),
            _ => Query::read(&key, ctx),
        };
        ops.push(ScheduledOp {
            at_ms: rng.random_range(1.0..300.0),
            query,
            level: ConsistencyLevel::ALL_LEVELS[rng.random_range(0..4)],
        });
    }
    RandomSchedule {
        topology,
        replication_factor: rf,
        clients,
        ops,
    }
}
