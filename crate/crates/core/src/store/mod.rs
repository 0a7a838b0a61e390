//! The replicated key-value store: per-node replica state, the coordinator
//! protocol that executes reads and writes at an explicit consistency level,
//! and last-write-wins version resolution.

mod cluster;
mod facade;
mod record;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consistency::{ClientContext, ConsistencyLevel, DataContext};

pub use cluster::{Cluster, Completion, DirectoryEntry, Message, ReqId, StoreConfig};
pub use facade::FogStore;
pub use record::{ReplicaStore, Version, VersionedRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Create,
    Read,
    Update,
    Delete,
    TxBegin,
    TxCommit,
    TxAbort,
    TxRollback,
}

impl QueryKind {
    /// `None` for transactional queries, which the store does not support.
    pub fn op_kind(&self) -> Option<OpKind> {
        match self {
            Self::Read => Some(OpKind::Read),
            Self::Create | Self::Update | Self::Delete => Some(OpKind::Write),
            Self::TxBegin | Self::TxCommit | Self::TxAbort | Self::TxRollback => None,
        }
    }
}

impl fmt::Display for QueryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Create => "create",
            Self::Read => "read",
            Self::Update => "update",
            Self::Delete => "delete",
            Self::TxBegin => "tx_begin",
            Self::TxCommit => "tx_commit",
            Self::TxAbort => "tx_abort",
            Self::TxRollback => "tx_rollback",
        };
        f.write_str(s)
    }
}

/// Direction of an operation as far as consistency levels are concerned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Read,
    Write,
}

impl OpKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Read => "read",
            Self::Write => "write",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub kind: QueryKind,
    pub key: String,
    pub value: Option<Vec<u8>>,
    pub client_ctx: ClientContext,
    pub data_ctx: Option<DataContext>,
}

impl Query {
    pub fn create(key: &str, value: Vec<u8>, client_ctx: ClientContext, data_ctx: DataContext) -> Self {
        Self {
            kind: QueryKind::Create,
            key: key.to_owned(),
            value: Some(value),
            client_ctx,
            data_ctx: Some(data_ctx),
        }
    }

    pub fn read(key: &str, client_ctx: ClientContext) -> Self {
        Self {
            kind: QueryKind::Read,
            key: key.to_owned(),
            value: None,
            client_ctx,
            data_ctx: None,
        }
    }

    /// A `data_ctx` moves the record's region anchor for later queries.
    pub fn update(key: &str, value: Vec<u8>, client_ctx: ClientContext, data_ctx: Option<DataContext>) -> Self {
        Self {
            kind: QueryKind::Update,
            key: key.to_owned(),
            value: Some(value),
            client_ctx,
            data_ctx,
        }
    }

    pub fn delete(key: &str, client_ctx: ClientContext) -> Self {
        Self {
            kind: QueryKind::Delete,
            key: key.to_owned(),
            value: None,
            client_ctx,
            data_ctx: None,
        }
    }

    pub fn tx(kind: QueryKind, client_ctx: ClientContext) -> Self {
        Self {
            kind,
            key: String::new(),
            value: None,
            client_ctx,
            data_ctx: None,
        }
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        let missing = |what: &str| Err(QueryError::Malformed(format!("{} requires {what}", self.kind)));
        match self.kind {
            QueryKind::Create if self.value.is_none() => missing("a value"),
            QueryKind::Create if self.data_ctx.is_none() => missing("a data context"),
            QueryKind::Update if self.value.is_none() => missing("a value"),
            QueryKind::Create | QueryKind::Read | QueryKind::Update | QueryKind::Delete if self.key.is_empty() => {
                missing("a key")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    NotFound,
}

/// Successful outcome of a query; failures travel as [`QueryError`].
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub status: Status,
    pub value: Option<Vec<u8>>,
    /// Version written, or version of the record a read returned.
    pub version: Option<Version>,
    pub level_used: ConsistencyLevel,
    /// Client-observed latency in simulated milliseconds.
    pub latency_ms: f64,
    pub acks_received: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryError {
    #[error("timed out with {acks}/{required} replica acks")]
    Timeout { acks: usize, required: usize },
    #[error("level needs {required} replicas but the key has only {available}")]
    NotEnoughReplicas { required: usize, available: usize },
    #[error("key `{0}` not found")]
    KeyNotFound(String),
    #[error("key `{0}` already exists")]
    DuplicateKey(String),
    #[error("consistency level {level} is infeasible with replication factor {replication_factor}")]
    LevelInfeasible {
        level: ConsistencyLevel,
        replication_factor: usize,
    },
    #[error("{0} is not supported")]
    UnsupportedOperation(QueryKind),
    #[error("no response from the coordinator within {0} ms")]
    NoResponse(f64),
    #[error("topology has no storage nodes")]
    NoStorageNodes,
    #[error("malformed query: {0}")]
    Malformed(String),
}

/// Replica acknowledgements a level needs at replication factor `rf`.
pub fn required_acks(level: ConsistencyLevel, rf: usize) -> Result<usize, QueryError> {
    let acks = match level {
        ConsistencyLevel::One => 1,
        ConsistencyLevel::Two => 2,
        ConsistencyLevel::Quorum => rf / 2 + 1,
        ConsistencyLevel::All => rf,
    };
    if rf == 0 || acks > rf {
        return Err(QueryError::LevelInfeasible {
            level,
            replication_factor: rf,
        });
    }
    Ok(acks)
}

/// Replication factor of a key and how many replicas it actually has
/// (fewer when the topology has fewer storage nodes than the factor).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Replication {
    pub factor: usize,
    pub available: usize,
}

/// Acks `level` needs for a key, or why the key cannot serve that level.
pub fn check_level(level: ConsistencyLevel, replication: Replication) -> Result<usize, QueryError> {
    let required = required_acks(level, replication.factor)?;
    if required > replication.available {
        return Err(QueryError::NotEnoughReplicas {
            required,
            available: replication.available,
        });
    }
    Ok(required)
}
