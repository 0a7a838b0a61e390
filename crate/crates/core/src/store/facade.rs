use std::sync::Arc;

use crate::consistency::{ConsistencyLevel, RegionSpecs};
use crate::netsim::{FaultAction, FaultScript, Network, NetworkConfig, SimError, SimReport, Simulator};
use crate::store::cluster::{Cluster, Completion, Message, ReqId, StoreConfig};
use crate::store::{Query, QueryError, QueryResult};
use crate::topology::{Topology, TopologyError};

/// A simulated cluster together with its event loop.
///
/// `execute` runs the simulation just far enough for one query to complete,
/// so sequential calls behave like a single client issuing queries one after
/// another. Background replication keeps going on later calls.
pub struct FogStore {
    sim: Simulator<Message>,
    cluster: Cluster,
}

impl FogStore {
    pub fn new(topology: Arc<Topology>, specs: RegionSpecs, config: StoreConfig) -> Self {
        Self::with_network(topology, specs, config, NetworkConfig::default())
    }

    pub fn with_network(
        topology: Arc<Topology>,
        specs: RegionSpecs,
        config: StoreConfig,
        network: NetworkConfig,
    ) -> Self {
        let sim = Simulator::new(Network::new(Arc::clone(&topology), network));
        Self {
            sim,
            cluster: Cluster::new(topology, specs, config),
        }
    }

    pub fn register_client(&mut self, client_id: &str, attach: &str) -> Result<(), TopologyError> {
        let ix = self.cluster.topology().ix(attach)?;
        self.cluster.register_client(client_id, ix);
        Ok(())
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    pub fn sim(&self) -> &Simulator<Message> {
        &self.sim
    }

    pub fn now(&self) -> f64 {
        self.sim.now()
    }

    pub fn enable_trace(&mut self) {
        self.sim.enable_trace();
    }

    pub fn take_trace(&mut self) -> Vec<String> {
        self.sim.take_trace()
    }

    pub fn load_faults(&mut self, script: &FaultScript) {
        self.sim.load_faults(script);
    }

    pub fn inject(&mut self, at_ms: f64, action: FaultAction) {
        self.sim.schedule_fault(at_ms, action);
    }

    /// Runs `query` through the consistency mapper and waits for the answer.
    pub fn execute(&mut self, query: Query) -> Result<QueryResult, QueryError> {
        let req = self.cluster.submit(&mut self.sim, query, None);
        self.wait_for(req)
    }

    /// Runs `query` at an explicit level, bypassing the mapper.
    pub fn execute_at(&mut self, query: Query, level: ConsistencyLevel) -> Result<QueryResult, QueryError> {
        let req = self.cluster.submit(&mut self.sim, query, Some(level));
        self.wait_for(req)
    }

    pub fn submit(&mut self, query: Query, level: Option<ConsistencyLevel>) -> ReqId {
        self.cluster.submit(&mut self.sim, query, level)
    }

    pub fn schedule_at(&mut self, at_ms: f64, query: Query, level: Option<ConsistencyLevel>) {
        self.cluster.schedule_at(&mut self.sim, at_ms, query, level);
    }

    /// Processes events until `req` completes at its client.
    fn wait_for(&mut self, req: ReqId) -> Result<QueryResult, QueryError> {
        loop {
            if let Some(done) = self.cluster.completion(req) {
                return done.outcome.clone();
            }
            match self.sim.step() {
                Some(ev) => self.cluster.handle(&mut self.sim, ev),
                // only happens when the client's own node is down
                None => return Err(QueryError::NoResponse(f64::INFINITY)),
            }
        }
    }

    pub fn run_until_quiescent(&mut self, max_ms: f64) -> Result<SimReport, SimError> {
        let cluster = &mut self.cluster;
        self.sim.run_until_quiescent(max_ms, |sim, ev| cluster.handle(sim, ev))
    }

    /// Issues `queries` back to back (each after the previous one completes)
    /// and runs to quiescence. Returns the completions in completion order.
    pub fn run_closed_loop(
        &mut self,
        queries: impl IntoIterator<Item = (Query, Option<ConsistencyLevel>)>,
        max_ms: f64,
    ) -> Result<Vec<Completion>, SimError> {
        self.cluster.start_closed_loop(&mut self.sim, queries);
        self.run_until_quiescent(max_ms)?;
        Ok(self.cluster.take_completions())
    }

    pub fn take_completions(&mut self) -> Vec<Completion> {
        self.cluster.take_completions()
    }

    /// Keys whose replicas on currently running nodes disagree.
    pub fn divergent_keys(&self) -> Vec<String> {
        let net = self.sim.network();
        self.cluster.divergent_keys(|n| !net.is_crashed(n))
    }
}
