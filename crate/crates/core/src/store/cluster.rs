//! Per-node state machines and the coordinator protocol.
//!
//! A client sends its query to the storage node with the lowest latency from
//! its attach point (the coordinator). The coordinator maps the query to a
//! consistency level, fans the operation out to every replica of the key and
//! answers once the level's ack count is reached. Writes keep propagating in
//! the background after the answer; reads return the highest version among
//! the responses they waited for. There is no read repair.
//!
//! Replica placements live in a cluster-wide directory that every node sees
//! instantly, standing in for gossiped ring metadata.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use crate::consistency::{map_and_execute, ConsistencyLevel, DataContext, RegionSpecs, StoreHandle};
use crate::netsim::{EventKind, FaultAction, SimEvent, Simulator};
use crate::placement::{place_replicas, ReplicaMap};
use crate::store::record::{ReplicaStore, Version, VersionedRecord};
use crate::store::{check_level, Query, QueryError, QueryKind, QueryResult, Replication, Status};
use crate::topology::{NodeIx, Topology};

pub type ReqId = u64;
type OpId = u64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoreConfig {
    pub replication_factor: usize,
    /// How long a coordinator waits for replica acks.
    pub timeout_ms: f64,
    /// How long a client waits for its coordinator; defaults to twice the
    /// coordinator timeout.
    pub client_timeout_ms: Option<f64>,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            replication_factor: 3,
            timeout_ms: 10_000.0,
            client_timeout_ms: None,
        }
    }
}

impl StoreConfig {
    pub fn with_replication_factor(replication_factor: usize) -> Self {
        Self {
            replication_factor,
            ..Self::default()
        }
    }

    fn client_timeout(&self) -> f64 {
        self.client_timeout_ms.unwrap_or(2.0 * self.timeout_ms)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Request {
        req: ReqId,
        query: Query,
        /// Explicit level; bypasses the consistency mapper.
        level: Option<ConsistencyLevel>,
    },
    Response {
        req: ReqId,
        outcome: Result<QueryResult, QueryError>,
    },
    WriteReq {
        op: OpId,
        record: VersionedRecord,
    },
    WriteAck {
        op: OpId,
        key: String,
        version: Version,
    },
    ReadReq {
        op: OpId,
        key: String,
    },
    ReadResp {
        op: OpId,
        key: String,
        record: Option<VersionedRecord>,
    },
    CoordinatorTimeout {
        op: OpId,
    },
    ClientTimeout {
        req: ReqId,
    },
    Issue {
        slot: usize,
    },
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Request { req, query, level } => {
                write!(f, "Request req={req} {} key={}", query.kind, query.key)?;
                if let Some(level) = level {
                    write!(f, " level={level}")?;
                }
                Ok(())
            }
            Self::Response { req, outcome } => match outcome {
                Ok(r) => write!(
                    f,
                    "Response req={req} {:?} level={} acks={}",
                    r.status, r.level_used, r.acks_received
                ),
                Err(e) => write!(f, "Response req={req} error={e}"),
            },
            Self::WriteReq { op, record } => write!(
                f,
                "WriteReq op={op} key={} version={}{}",
                record.key,
                record.version,
                if record.is_tombstone() { " tombstone" } else { "" }
            ),
            Self::WriteAck { op, key, version } => write!(f, "WriteAck op={op} key={key} version={version}"),
            Self::ReadReq { op, key } => write!(f, "ReadReq op={op} key={key}"),
            Self::ReadResp { op, key, record } => match record {
                Some(r) => write!(f, "ReadResp op={op} key={key} version={}", r.version),
                None => write!(f, "ReadResp op={op} key={key} absent"),
            },
            Self::CoordinatorTimeout { op } => write!(f, "CoordinatorTimeout op={op}"),
            Self::ClientTimeout { req } => write!(f, "ClientTimeout req={req}"),
            Self::Issue { slot } => write!(f, "Issue slot={slot}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectoryEntry {
    pub map: ReplicaMap,
    /// Data location at placement time.
    pub anchor: DataContext,
    /// False once the key has been deleted.
    pub live: bool,
}

/// A finished client request as observed at the client.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub req: ReqId,
    pub client_id: String,
    pub kind: QueryKind,
    pub key: String,
    pub issued_at_ms: f64,
    pub completed_at_ms: f64,
    pub outcome: Result<QueryResult, QueryError>,
}

impl Completion {
    pub fn latency_ms(&self) -> f64 {
        self.completed_at_ms - self.issued_at_ms
    }
}

#[derive(Debug)]
struct InFlight {
    client_id: String,
    kind: QueryKind,
    key: String,
    issued_at_ms: f64,
}

#[derive(Debug)]
enum PendingKind {
    Write { version: Version },
    Read { best: Option<VersionedRecord> },
}

#[derive(Debug)]
struct PendingOp {
    req: ReqId,
    client_node: NodeIx,
    level: ConsistencyLevel,
    required: usize,
    acks: usize,
    kind: PendingKind,
}

type Submission = (Query, Option<ConsistencyLevel>);

pub struct Cluster {
    topology: Arc<Topology>,
    specs: Arc<RegionSpecs>,
    config: StoreConfig,
    replicas: Vec<ReplicaStore>,
    /// Coordinator state per node; lost on crash.
    pending: Vec<BTreeMap<OpId, PendingOp>>,
    counters: Vec<HashMap<String, u64>>,
    directory: BTreeMap<String, DirectoryEntry>,
    clients: BTreeMap<String, NodeIx>,
    coordinators: Vec<Option<NodeIx>>,
    in_flight: BTreeMap<ReqId, InFlight>,
    scheduled: Vec<Option<Submission>>,
    closed_loop: VecDeque<Submission>,
    closed_loop_current: Option<ReqId>,
    completions: Vec<Completion>,
    next_req: ReqId,
    next_op: OpId,
}

impl Cluster {
    pub fn new(topology: Arc<Topology>, specs: RegionSpecs, config: StoreConfig) -> Self {
        let n = topology.len();
        let coordinators = (0..n).map(|ix| topology.nearest_storage_by_latency(ix).ok()).collect();
        Self {
            topology,
            specs: Arc::new(specs),
            config,
            replicas: vec![ReplicaStore::default(); n],
            pending: (0..n).map(|_| BTreeMap::new()).collect(),
            counters: vec![HashMap::new(); n],
            directory: BTreeMap::new(),
            clients: BTreeMap::new(),
            coordinators,
            in_flight: BTreeMap::new(),
            scheduled: Vec::new(),
            closed_loop: VecDeque::new(),
            closed_loop_current: None,
            completions: Vec::new(),
            next_req: 0,
            next_op: 0,
        }
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn specs(&self) -> &RegionSpecs {
        &self.specs
    }

    /// Pins a client id to a network attach node.
    pub fn register_client(&mut self, client_id: &str, attach: NodeIx) {
        self.clients.insert(client_id.to_owned(), attach);
    }

    /// Registered attach node, else the node geographically closest to the
    /// client.
    pub fn attach_point(&self, ctx: &crate::consistency::ClientContext) -> NodeIx {
        self.clients
            .get(&ctx.client_id)
            .copied()
            .unwrap_or_else(|| self.topology.nearest_node(ctx.client_geo))
    }

    /// Storage node with the lowest latency from `attach`.
    pub fn coordinator_for(&self, attach: NodeIx) -> Option<NodeIx> {
        self.coordinators[attach]
    }

    pub fn replica(&self, node: NodeIx) -> &ReplicaStore {
        &self.replicas[node]
    }

    pub fn directory(&self) -> &BTreeMap<String, DirectoryEntry> {
        &self.directory
    }

    pub fn completions(&self) -> &[Completion] {
        &self.completions
    }

    pub fn take_completions(&mut self) -> Vec<Completion> {
        std::mem::take(&mut self.completions)
    }

    pub fn completion(&self, req: ReqId) -> Option<&Completion> {
        self.completions.iter().rev().find(|c| c.req == req)
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    pub fn closed_loop_remaining(&self) -> usize {
        self.closed_loop.len() + usize::from(self.closed_loop_current.is_some())
    }

    /// Keys whose replicas on nodes satisfying `alive` hold different records.
    pub fn divergent_keys(&self, alive: impl Fn(NodeIx) -> bool) -> Vec<String> {
        self.directory
            .iter()
            .filter(|(key, entry)| {
                let mut live = entry.map.replicas.iter().filter(|&&n| alive(n));
                let Some(&first) = live.next() else {
                    return false;
                };
                let reference = self.replicas[first].get(key);
                live.any(|&n| self.replicas[n].get(key) != reference)
            })
            .map(|(key, _)| key.clone())
            .collect()
    }

    fn replication(&self, key: &str) -> Replication {
        let factor = self.config.replication_factor;
        match self.directory.get(key) {
            Some(entry) => Replication {
                factor: entry.map.replication_factor,
                available: entry.map.replicas.len(),
            },
            None => Replication {
                factor,
                available: factor.min(self.topology.storage_nodes().count()),
            },
        }
    }

    /// The record's data context as seen by `node`: its local replica if it
    /// has one, else the placement-time location.
    fn local_anchor(&self, node: NodeIx, key: &str) -> Option<DataContext> {
        self.replicas[node]
            .get(key)
            .map(|r| r.data_ctx)
            .or_else(|| self.directory.get(key).map(|e| e.anchor))
    }

    /// Sends a query from the client's attach node to its coordinator.
    pub fn submit(&mut self, sim: &mut Simulator<Message>, query: Query, level: Option<ConsistencyLevel>) -> ReqId {
        let req = self.next_req;
        self.next_req += 1;
        let attach = self.attach_point(&query.client_ctx);
        self.in_flight.insert(
            req,
            InFlight {
                client_id: query.client_ctx.client_id.clone(),
                kind: query.kind,
                key: query.key.clone(),
                issued_at_ms: sim.now(),
            },
        );
        sim.schedule_timer(attach, self.config.client_timeout(), Message::ClientTimeout { req });
        match self.coordinator_for(attach) {
            Some(coord) => {
                sim.schedule_message(attach, coord, Message::Request { req, query, level });
            }
            None => {
                let outcome = Err(QueryError::NoStorageNodes);
                sim.schedule_message(attach, attach, Message::Response { req, outcome });
            }
        }
        req
    }

    /// Submits `query` from its client's attach node at simulated time `at_ms`.
    pub fn schedule_at(
        &mut self,
        sim: &mut Simulator<Message>,
        at_ms: f64,
        query: Query,
        level: Option<ConsistencyLevel>,
    ) {
        let attach = self.attach_point(&query.client_ctx);
        let slot = self.scheduled.len();
        self.scheduled.push(Some((query, level)));
        sim.schedule_timer(attach, at_ms - sim.now(), Message::Issue { slot });
    }

    /// Queues queries to be issued one after another, each as soon as the
    /// previous one completes.
    pub fn start_closed_loop(&mut self, sim: &mut Simulator<Message>, queries: impl IntoIterator<Item = Submission>) {
        self.closed_loop.extend(queries);
        if self.closed_loop_current.is_none() {
            self.issue_next(sim);
        }
    }

    fn issue_next(&mut self, sim: &mut Simulator<Message>) {
        self.closed_loop_current = self
            .closed_loop
            .pop_front()
            .map(|(query, level)| self.submit(sim, query, level));
    }

    pub fn handle(&mut self, sim: &mut Simulator<Message>, event: SimEvent<Message>) {
        match event.kind {
            EventKind::Message { from, to, payload } => self.on_message(sim, from, to, payload),
            EventKind::Timer { node, payload } => self.on_timer(sim, node, payload),
            EventKind::Fault(FaultAction::Crash(node)) => {
                // coordinator bookkeeping is volatile; replica contents survive
                self.pending[node].clear();
            }
            EventKind::Fault(_) => {}
        }
    }

    fn on_message(&mut self, sim: &mut Simulator<Message>, from: NodeIx, to: NodeIx, msg: Message) {
        match msg {
            Message::Request { req, query, level } => self.on_request(sim, from, to, req, query, level),
            Message::Response { req, outcome } => self.on_response(sim, req, outcome),
            Message::WriteReq { op, record } => {
                let key = record.key.clone();
                let version = record.version;
                self.replicas[to].apply(record);
                sim.schedule_message(to, from, Message::WriteAck { op, key, version });
            }
            Message::ReadReq { op, key } => {
                let record = self.replicas[to].get(&key).cloned();
                sim.schedule_message(to, from, Message::ReadResp { op, key, record });
            }
            Message::WriteAck { op, .. } => {
                if let Some(p) = self.pending[to].get_mut(&op) {
                    p.acks += 1;
                    self.maybe_finish(sim, to, op);
                }
            }
            Message::ReadResp { op, record, .. } => {
                if let Some(p) = self.pending[to].get_mut(&op) {
                    p.acks += 1;
                    if let (PendingKind::Read { best }, Some(record)) = (&mut p.kind, record) {
                        if best.as_ref().is_none_or(|b| record.version > b.version) {
                            *best = Some(record);
                        }
                    }
                    self.maybe_finish(sim, to, op);
                }
            }
            Message::CoordinatorTimeout { .. } | Message::ClientTimeout { .. } | Message::Issue { .. } => {
                unreachable!("timer payload sent as a message")
            }
        }
    }

    fn on_timer(&mut self, sim: &mut Simulator<Message>, node: NodeIx, msg: Message) {
        match msg {
            Message::CoordinatorTimeout { op } => {
                if let Some(p) = self.pending[node].remove(&op) {
                    let err = QueryError::Timeout {
                        acks: p.acks,
                        required: p.required,
                    };
                    sim.schedule_message(
                        node,
                        p.client_node,
                        Message::Response {
                            req: p.req,
                            outcome: Err(err),
                        },
                    );
                }
            }
            Message::ClientTimeout { req } => {
                if self.in_flight.contains_key(&req) {
                    let waited = self.config.client_timeout();
                    self.on_response(sim, req, Err(QueryError::NoResponse(waited)));
                }
            }
            Message::Issue { slot } => {
                if let Some((query, level)) = self.scheduled[slot].take() {
                    self.submit(sim, query, level);
                }
            }
            other => unreachable!("message payload used as a timer: {other}"),
        }
    }

    fn on_request(
        &mut self,
        sim: &mut Simulator<Message>,
        client_node: NodeIx,
        coord: NodeIx,
        req: ReqId,
        query: Query,
        level: Option<ConsistencyLevel>,
    ) {
        let result = match level {
            Some(level) => self.execute_at_level(sim, coord, client_node, req, &query, level),
            None => {
                let specs = Arc::clone(&self.specs);
                let mut handle = CoordinatorHandle {
                    cluster: self,
                    sim,
                    coord,
                    client_node,
                    req,
                };
                map_and_execute(&query, &specs, &mut handle)
            }
        };
        if let Err(err) = result {
            sim.schedule_message(coord, client_node, Message::Response { req, outcome: Err(err) });
        }
    }

    fn on_response(&mut self, sim: &mut Simulator<Message>, req: ReqId, outcome: Result<QueryResult, QueryError>) {
        let Some(flight) = self.in_flight.remove(&req) else {
            return;
        };
        let now = sim.now();
        let latency = now - flight.issued_at_ms;
        let outcome = outcome.map(|mut r| {
            r.latency_ms = latency;
            r
        });
        self.completions.push(Completion {
            req,
            client_id: flight.client_id,
            kind: flight.kind,
            key: flight.key,
            issued_at_ms: flight.issued_at_ms,
            completed_at_ms: now,
            outcome,
        });
        if self.closed_loop_current == Some(req) {
            self.issue_next(sim);
        }
    }

    /// Runs a query at the given level on coordinator `coord`.
    fn execute_at_level(
        &mut self,
        sim: &mut Simulator<Message>,
        coord: NodeIx,
        client_node: NodeIx,
        req: ReqId,
        query: &Query,
        level: ConsistencyLevel,
    ) -> Result<(), QueryError> {
        query.validate()?;
        let key = query.key.as_str();
        let live = self.directory.get(key).is_some_and(|e| e.live);
        let ctx = OpContext {
            coord,
            client_node,
            req,
            level,
        };
        match query.kind {
            QueryKind::Create => {
                if live {
                    return Err(QueryError::DuplicateKey(key.to_owned()));
                }
                let data_ctx = query.data_ctx.expect("validated create carries a data context");
                // a re-created key stays where its tombstones are
                let map = match self.directory.get(key) {
                    Some(dead) => dead.map.clone(),
                    None => place_replicas(key, data_ctx.data_geo, &self.topology, self.config.replication_factor)
                        .map_err(|_| QueryError::NoStorageNodes)?,
                };
                let required = check_level(
                    level,
                    Replication {
                        factor: map.replication_factor,
                        available: map.replicas.len(),
                    },
                )?;
                self.directory.insert(
                    key.to_owned(),
                    DirectoryEntry {
                        map,
                        anchor: data_ctx,
                        live: true,
                    },
                );
                self.coordinator_write(sim, ctx, key, query.value.clone(), data_ctx, required);
            }
            QueryKind::Update | QueryKind::Delete => {
                if !live {
                    return Err(QueryError::KeyNotFound(key.to_owned()));
                }
                let required = check_level(level, self.replication(key))?;
                let data_ctx = query
                    .data_ctx
                    .or_else(|| self.local_anchor(coord, key))
                    .expect("live key has an anchor");
                if query.kind == QueryKind::Delete {
                    self.directory.get_mut(key).expect("live").live = false;
                }
                self.coordinator_write(sim, ctx, key, query.value.clone(), data_ctx, required);
            }
            QueryKind::Read => {
                let required = check_level(level, self.replication(key))?;
                if self.directory.contains_key(key) {
                    self.coordinator_read(sim, ctx, key, required);
                } else {
                    let result = QueryResult {
                        status: Status::NotFound,
                        value: None,
                        version: None,
                        level_used: level,
                        latency_ms: 0.0,
                        acks_received: 0,
                    };
                    sim.schedule_message(
                        coord,
                        client_node,
                        Message::Response {
                            req,
                            outcome: Ok(result),
                        },
                    );
                }
            }
            QueryKind::TxBegin | QueryKind::TxCommit | QueryKind::TxAbort | QueryKind::TxRollback => {
                return Err(QueryError::UnsupportedOperation(query.kind));
            }
        }
        Ok(())
    }

    /// Next version for `key` at `coord`: the simulated clock in
    /// nanoseconds, bumped past anything this node has assigned or stored.
    fn next_version(&mut self, now_ms: f64, coord: NodeIx, key: &str) -> Version {
        let clock = (now_ms * 1e6) as u64;
        let stored = self.replicas[coord].get(key).map_or(0, |r| r.version.counter + 1);
        let assigned = self.counters[coord].get(key).map_or(0, |c| c + 1);
        let counter = clock.max(stored).max(assigned).max(1);
        self.counters[coord].insert(key.to_owned(), counter);
        Version { counter, writer: coord }
    }

    fn coordinator_write(
        &mut self,
        sim: &mut Simulator<Message>,
        ctx: OpContext,
        key: &str,
        value: Option<Vec<u8>>,
        data_ctx: DataContext,
        required: usize,
    ) {
        let version = self.next_version(sim.now(), ctx.coord, key);
        let record = VersionedRecord {
            key: key.to_owned(),
            value,
            version,
            data_ctx,
        };
        let op = self.next_op;
        self.next_op += 1;
        let mut acks = 0;
        let replicas = self.directory[key].map.replicas.clone();
        for r in replicas {
            if r == ctx.coord {
                self.replicas[r].apply(record.clone());
                acks += 1;
            } else {
                sim.schedule_message(
                    ctx.coord,
                    r,
                    Message::WriteReq {
                        op,
                        record: record.clone(),
                    },
                );
            }
        }
        self.track(sim, ctx, op, required, acks, PendingKind::Write { version });
    }

    fn coordinator_read(&mut self, sim: &mut Simulator<Message>, ctx: OpContext, key: &str, required: usize) {
        let op = self.next_op;
        self.next_op += 1;
        let mut acks = 0;
        let mut best = None;
        let replicas = self.directory[key].map.replicas.clone();
        for r in replicas {
            if r == ctx.coord {
                best = self.replicas[r].get(key).cloned();
                acks += 1;
            } else {
                sim.schedule_message(
                    ctx.coord,
                    r,
                    Message::ReadReq {
                        op,
                        key: key.to_owned(),
                    },
                );
            }
        }
        self.track(sim, ctx, op, required, acks, PendingKind::Read { best });
    }

    fn track(
        &mut self,
        sim: &mut Simulator<Message>,
        ctx: OpContext,
        op: OpId,
        required: usize,
        acks: usize,
        kind: PendingKind,
    ) {
        self.pending[ctx.coord].insert(
            op,
            PendingOp {
                req: ctx.req,
                client_node: ctx.client_node,
                level: ctx.level,
                required,
                acks,
                kind,
            },
        );
        if !self.maybe_finish(sim, ctx.coord, op) {
            sim.schedule_timer(ctx.coord, self.config.timeout_ms, Message::CoordinatorTimeout { op });
        }
    }

    /// Answers the client if `op` has gathered enough acks.
    fn maybe_finish(&mut self, sim: &mut Simulator<Message>, coord: NodeIx, op: OpId) -> bool {
        let ready = self.pending[coord].get(&op).is_some_and(|p| p.acks >= p.required);
        if !ready {
            return false;
        }
        let p = self.pending[coord].remove(&op).expect("checked above");
        let (status, value, version) = match p.kind {
            PendingKind::Write { version } => (Status::Ok, None, Some(version)),
            PendingKind::Read { best: None } => (Status::NotFound, None, None),
            PendingKind::Read { best: Some(r) } => match r.value {
                Some(v) => (Status::Ok, Some(v), Some(r.version)),
                None => (Status::NotFound, None, Some(r.version)),
            },
        };
        let result = QueryResult {
            status,
            value,
            version,
            level_used: p.level,
            latency_ms: 0.0,
            acks_received: p.acks,
        };
        sim.schedule_message(
            coord,
            p.client_node,
            Message::Response {
                req: p.req,
                outcome: Ok(result),
            },
        );
        true
    }
}

#[derive(Debug, Clone, Copy)]
struct OpContext {
    coord: NodeIx,
    client_node: NodeIx,
    req: ReqId,
    level: ConsistencyLevel,
}

/// The coordinator's view of the store, handed to the consistency mapper.
struct CoordinatorHandle<'a> {
    cluster: &'a mut Cluster,
    sim: &'a mut Simulator<Message>,
    coord: NodeIx,
    client_node: NodeIx,
    req: ReqId,
}

impl StoreHandle for CoordinatorHandle<'_> {
    type Pending = ();

    fn data_context(&self, key: &str) -> Option<DataContext> {
        self.cluster.local_anchor(self.coord, key)
    }

    fn replication(&self, key: &str) -> Replication {
        self.cluster.replication(key)
    }

    fn execute(&mut self, query: &Query, level: ConsistencyLevel) -> Result<(), QueryError> {
        self.cluster
            .execute_at_level(self.sim, self.coord, self.client_node, self.req, query, level)
    }
}
