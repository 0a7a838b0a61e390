//! Failure-group aware replica placement.
//!
//! The first replica goes to the storage node geographically closest to the
//! data. Every further replica is the storage node with the lowest network
//! latency to that first replica whose failure group is not yet used. When
//! the groups run out, the remaining slots are filled by latency alone and
//! the map is flagged as degraded.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::topology::{GeoPoint, NodeIx, Topology, TopologyError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlacementError {
    #[error("replication factor must be at least 1")]
    ZeroReplicationFactor,
    #[error("topology has no storage nodes")]
    NoStorageNodes,
}

/// Replica assignment of one key. `replicas[0]` is the primary (closest to
/// the data).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicaMap {
    pub key: String,
    pub replicas: Vec<NodeIx>,
    pub replication_factor: usize,
    /// Set when some replicas had to share a failure group.
    pub degraded: bool,
}

impl ReplicaMap {
    pub fn replica_ids<'a>(&self, topology: &'a Topology) -> Vec<&'a str> {
        self.replicas.iter().map(|&ix| topology.node(ix).id.as_str()).collect()
    }

    pub fn contains(&self, node: NodeIx) -> bool {
        self.replicas.contains(&node)
    }

    pub fn primary(&self) -> NodeIx {
        self.replicas[0]
    }

    /// `key,replica1,...,replicaN,degraded`
    pub fn csv_row(&self, topology: &Topology) -> String {
        let mut row = self.key.clone();
        for id in self.replica_ids(topology) {
            row.push(',');
            row.push_str(id);
        }
        row.push(',');
        row.push_str(if self.degraded { "true" } else { "false" });
        row
    }
}

pub fn place_replicas(
    key: &str,
    data_location: GeoPoint,
    topology: &Topology,
    replication_factor: usize,
) -> Result<ReplicaMap, PlacementError> {
    if replication_factor == 0 {
        return Err(PlacementError::ZeroReplicationFactor);
    }
    let primary = topology.find_closest(data_location).map_err(|e| match e {
        TopologyError::NoStorageNodes => PlacementError::NoStorageNodes,
        other => unreachable!("find_closest only fails without storage: {other}"),
    })?;

    // storage nodes ordered by latency to the primary, then id
    let mut candidates: Vec<NodeIx> = topology.storage_nodes().filter(|&ix| ix != primary).collect();
    candidates.sort_by(|&a, &b| {
        topology
            .latency_between(primary, a)
            .total_cmp(&topology.latency_between(primary, b))
            .then(a.cmp(&b))
    });

    let mut replicas = vec![primary];
    let mut used_groups: BTreeSet<&str> = BTreeSet::new();
    used_groups.insert(&topology.node(primary).failure_group);
    let mut degraded = false;

    while replicas.len() < replication_factor {
        let fresh_group = candidates
            .iter()
            .position(|&ix| !used_groups.contains(topology.node(ix).failure_group.as_str()));
        let pick = match fresh_group {
            Some(pos) => pos,
            None if !candidates.is_empty() => {
                degraded = true;
                0
            }
            None => break,
        };
        let ix = candidates.remove(pick);
        used_groups.insert(&topology.node(ix).failure_group);
        replicas.push(ix);
    }

    Ok(ReplicaMap {
        key: key.to_owned(),
        replicas,
        replication_factor,
        degraded,
    })
}
