//! A fog-aware replicated key-value store running on a deterministic network
//! simulator.
//!
//! - [`topology`]: fog nodes, failure groups, link latencies.
//! - [`placement`]: failure-group aware replica placement.
//! - [`consistency`]: consistency regions and the query-to-level mapper.
//! - [`store`]: replicas, coordinator protocol, last-write-wins versions.
//! - [`netsim`]: discrete-event simulator with crash and partition faults.
//! - [`testkit`]: seeded topology generators.
//! - [`workload`]: read-latest workload generation and latency percentiles.

pub mod consistency;
pub mod netsim;
pub mod placement;
pub mod store;
pub mod testkit;
pub mod topology;
pub mod workload;

pub use consistency::{ClientContext, ConsistencyLevel, DataContext, RegionSpecs};
pub use store::{FogStore, OpKind, Query, QueryError, QueryKind, QueryResult, StoreConfig};
pub use topology::{GeoPoint, Topology};
