//! Fog continuum model: nodes, failure groups and latency-weighted links.
//!
//! Two distance notions live here. Geographic distance (planar meters) is
//! used for data-to-node closeness and consistency regions; network latency
//! (shortest path over configured link delays, milliseconds) is used for
//! node-to-node closeness.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use petgraph::algo::dijkstra;
use petgraph::graph::{NodeIndex, UnGraph};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense index of a node inside a [`Topology`] (position in id order).
pub type NodeIx = usize;

/// A point in a local planar projection, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct GeoPoint {
    pub x: f64,
    pub y: f64,
}

impl GeoPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for GeoPoint {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<GeoPoint> for [f64; 2] {
    fn from(p: GeoPoint) -> Self {
        [p.x, p.y]
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Euclidean distance in meters.
pub fn geo_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

fn default_storage() -> bool {
    true
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

/// A compute/storage host in the fog continuum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FogNode {
    pub id: String,
    pub geo: GeoPoint,
    pub failure_group: String,
    /// 0 = edge, increasing toward the cloud.
    #[serde(default)]
    pub tier: u32,
    /// Whether a store instance runs on this node.
    #[serde(default = "default_storage")]
    pub is_storage: bool,
    /// Per-message processing delay added on delivery to this node.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub service_ms: f64,
}

impl FogNode {
    pub fn storage(id: &str, geo: GeoPoint, failure_group: &str) -> Self {
        Self {
            id: id.to_owned(),
            geo,
            failure_group: failure_group.to_owned(),
            tier: 0,
            is_storage: true,
            service_ms: 0.0,
        }
    }

    /// A node that forwards traffic or hosts clients but stores nothing.
    pub fn relay(id: &str, geo: GeoPoint, failure_group: &str) -> Self {
        Self {
            is_storage: false,
            ..Self::storage(id, geo, failure_group)
        }
    }
}

/// Nodes expected to fail together for a shared technical cause.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailureGroup {
    pub id: String,
    pub members: BTreeSet<String>,
}

/// Symmetric link with a one-way propagation delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub a: String,
    pub b: String,
    pub latency_ms: f64,
}

impl Link {
    pub fn new(a: &str, b: &str, latency_ms: f64) -> Self {
        Self {
            a: a.to_owned(),
            b: b.to_owned(),
            latency_ms,
        }
    }
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("topology has no nodes")]
    Empty,
    #[error("node #{index}: duplicate node id `{id}`")]
    DuplicateNode { index: usize, id: String },
    #[error("node #{index} (`{id}`): empty identifier field")]
    EmptyField { index: usize, id: String },
    #[error("node #{index} (`{id}`): coordinates must be finite")]
    BadCoordinates { index: usize, id: String },
    #[error("node #{index} (`{id}`): service time must be finite and non-negative")]
    BadServiceTime { index: usize, id: String },
    #[error("link #{index} ({a}-{b}): latency_ms must be positive and finite, got {latency_ms}")]
    BadLatency {
        index: usize,
        a: String,
        b: String,
        latency_ms: f64,
    },
    #[error("link #{index}: unknown endpoint `{node}`")]
    UnknownEndpoint { index: usize, node: String },
    #[error("link #{index}: node `{node}` linked to itself")]
    SelfLoop { index: usize, node: String },
    #[error("node #{index} (`{node}`) is unreachable from `{from}`: topology is disconnected")]
    Unreachable { index: usize, from: String, node: String },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("topology has no storage nodes")]
    NoStorageNodes,
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<TopologyError>,
    },
    #[error("invalid topology JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    InFile {
        path: String,
        #[source]
        source: Box<TopologyError>,
    },
}

impl TopologyError {
    /// What a file locator should search for to find the offending entry.
    fn entry(&self) -> Option<(&'static str, usize)> {
        match self {
            Self::DuplicateNode { index, .. }
            | Self::EmptyField { index, .. }
            | Self::BadCoordinates { index, .. }
            | Self::BadServiceTime { index, .. }
            | Self::Unreachable { index, .. } => Some(("id", *index)),
            Self::BadLatency { index, .. } | Self::UnknownEndpoint { index, .. } | Self::SelfLoop { index, .. } => {
                Some(("latency_ms", *index))
            }
            _ => None,
        }
    }
}

/// On-disk layout of a topology file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyFile {
    pub nodes: Vec<FogNode>,
    pub links: Vec<Link>,
}

/// Immutable fog topology with precomputed all-pairs network latency.
#[derive(Debug, Clone)]
pub struct Topology {
    nodes: Vec<FogNode>,
    index: HashMap<String, NodeIx>,
    groups: Vec<FailureGroup>,
    links: Vec<Link>,
    latency: Vec<Vec<f64>>,
}

impl Topology {
    /// Validates and builds a topology. Error indices refer to positions in
    /// the given vectors.
    pub fn new(nodes: Vec<FogNode>, links: Vec<Link>) -> Result<Self, TopologyError> {
        if nodes.is_empty() {
            return Err(TopologyError::Empty);
        }
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (index, node) in nodes.iter().enumerate() {
            if seen.insert(node.id.as_str(), index).is_some() {
                return Err(TopologyError::DuplicateNode {
                    index,
                    id: node.id.clone(),
                });
            }
            if node.id.is_empty() || node.failure_group.is_empty() {
                return Err(TopologyError::EmptyField {
                    index,
                    id: node.id.clone(),
                });
            }
            if !node.geo.is_finite() {
                return Err(TopologyError::BadCoordinates {
                    index,
                    id: node.id.clone(),
                });
            }
            if !(node.service_ms.is_finite() && node.service_ms >= 0.0) {
                return Err(TopologyError::BadServiceTime {
                    index,
                    id: node.id.clone(),
                });
            }
        }
        for (index, link) in links.iter().enumerate() {
            for end in [&link.a, &link.b] {
                if !seen.contains_key(end.as_str()) {
                    return Err(TopologyError::UnknownEndpoint {
                        index,
                        node: end.clone(),
                    });
                }
            }
            if link.a == link.b {
                return Err(TopologyError::SelfLoop {
                    index,
                    node: link.a.clone(),
                });
            }
            if !(link.latency_ms.is_finite() && link.latency_ms > 0.0) {
                return Err(TopologyError::BadLatency {
                    index,
                    a: link.a.clone(),
                    b: link.b.clone(),
                    latency_ms: link.latency_ms,
                });
            }
        }

        // Connectivity is checked in input order so the error points at the
        // first unreachable entry of the file.
        let latency_in_input_order = all_pairs_latency(&nodes, &links);
        if let Some(j) = latency_in_input_order[0].iter().position(|d| d.is_none()) {
            return Err(TopologyError::Unreachable {
                index: j,
                from: nodes[0].id.clone(),
                node: nodes[j].id.clone(),
            });
        }

        let mut order: Vec<usize> = (0..nodes.len()).collect();
        order.sort_by(|&i, &j| nodes[i].id.cmp(&nodes[j].id));
        let latency = order
            .iter()
            .map(|&i| {
                order
                    .iter()
                    .map(|&j| latency_in_input_order[i][j].expect("connected"))
                    .collect()
            })
            .collect();
        let mut sorted: Vec<Option<FogNode>> = nodes.into_iter().map(Some).collect();
        let nodes: Vec<FogNode> = order
            .iter()
            .map(|&i| sorted[i].take().expect("each node moved once"))
            .collect();
        let index = nodes.iter().enumerate().map(|(ix, n)| (n.id.clone(), ix)).collect();

        let mut by_group: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
        for node in &nodes {
            by_group
                .entry(node.failure_group.as_str())
                .or_default()
                .insert(node.id.clone());
        }
        let groups: Vec<FailureGroup> = by_group
            .into_iter()
            .map(|(id, members)| FailureGroup {
                id: id.to_owned(),
                members,
            })
            .collect();
        debug_assert_eq!(
            groups.iter().map(|g| g.members.len()).sum::<usize>(),
            nodes.len(),
            "failure groups must partition the node set"
        );

        Ok(Self {
            nodes,
            index,
            groups,
            links,
            latency,
        })
    }

    /// Parses a topology file, reporting validation failures with the line of
    /// the offending entry.
    pub fn from_json(text: &str) -> Result<Self, TopologyError> {
        let file: TopologyFile = serde_json::from_str(text)?;
        Self::new(file.nodes, file.links).map_err(|err| match err.entry() {
            Some((key, nth)) => match locate_key(text, key, nth) {
                Some(line) => TopologyError::AtLine {
                    line,
                    source: Box::new(err),
                },
                None => err,
            },
            None => err,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TopologyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TopologyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text).map_err(|err| TopologyError::InFile {
            path: path.display().to_string(),
            source: Box::new(err),
        })
    }

    pub fn to_file(&self) -> TopologyFile {
        TopologyFile {
            nodes: self.nodes.clone(),
            links: self.links.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("topology serializes")
    }

    /// A copy with every link latency multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, TopologyError> {
        let links = self
            .links
            .iter()
            .map(|l| Link::new(&l.a, &l.b, l.latency_ms * factor))
            .collect();
        Self::new(self.nodes.clone(), links)
    }

    /// Nodes in ascending id order; a node's position is its [`NodeIx`].
    pub fn nodes(&self) -> &[FogNode] {
        &self.nodes
    }

    pub fn node(&self, ix: NodeIx) -> &FogNode {
        &self.nodes[ix]
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn groups(&self) -> &[FailureGroup] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ix(&self, id: &str) -> Result<NodeIx, TopologyError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| TopologyError::UnknownNode(id.to_owned()))
    }

    pub fn storage_nodes(&self) -> impl Iterator<Item = NodeIx> + '_ {
        (0..self.nodes.len()).filter(|&ix| self.nodes[ix].is_storage)
    }

    /// One-way shortest-path latency in milliseconds between two nodes.
    pub fn network_latency(&self, a: &str, b: &str) -> Result<f64, TopologyError> {
        Ok(self.latency[self.ix(a)?][self.ix(b)?])
    }

    pub fn latency_between(&self, a: NodeIx, b: NodeIx) -> f64 {
        self.latency[a][b]
    }

    /// The storage node geographically closest to `location`, ties broken by
    /// the smaller node id.
    pub fn find_closest(&self, location: GeoPoint) -> Result<NodeIx, TopologyError> {
        let mut best: Option<(NodeIx, f64)> = None;
        for ix in self.storage_nodes() {
            let d = geo_distance(self.nodes[ix].geo, location);
            // ids ascend with ix, so strict comparison keeps the smaller id
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((ix, d));
            }
        }
        best.map(|(ix, _)| ix).ok_or(TopologyError::NoStorageNodes)
    }

    /// The storage node with the lowest network latency from `from` (itself
    /// when `from` stores data).
    pub fn nearest_storage_by_latency(&self, from: NodeIx) -> Result<NodeIx, TopologyError> {
        let mut best: Option<(NodeIx, f64)> = None;
        for ix in self.storage_nodes() {
            let d = self.latency[from][ix];
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((ix, d));
            }
        }
        best.map(|(ix, _)| ix).ok_or(TopologyError::NoStorageNodes)
    }

    /// The node of any kind geographically closest to `location`.
    pub fn nearest_node(&self, location: GeoPoint) -> NodeIx {
        let mut best = (0, f64::INFINITY);
        for (ix, node) in self.nodes.iter().enumerate() {
            let d = geo_distance(node.geo, location);
            if d < best.1 {
                best = (ix, d);
            }
        }
        best.0
    }
}

/// Shortest-path latencies in input order; `None` marks unreachable pairs.
/// Each pair is computed once from the lower index and mirrored so the
/// matrix is exactly symmetric.
fn all_pairs_latency(nodes: &[FogNode], links: &[Link]) -> Vec<Vec<Option<f64>>> {
    let mut graph: UnGraph<(), f64> = UnGraph::with_capacity(nodes.len(), links.len());
    let ids: HashMap<&str, NodeIndex> = nodes.iter().map(|n| (n.id.as_str(), graph.add_node(()))).collect();
    for link in links {
        graph.add_edge(ids[link.a.as_str()], ids[link.b.as_str()], link.latency_ms);
    }
    let n = nodes.len();
    let dists: Vec<_> = (0..n)
        .map(|i| dijkstra(&graph, NodeIndex::new(i), None, |e| *e.weight()))
        .collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| dists[i.min(j)].get(&NodeIndex::new(i.max(j))).copied())
                .collect()
        })
        .collect()
}

/// 1-based line of the `nth` (0-based) occurrence of `"key":` in `text`.
fn locate_key(text: &str, key: &str, nth: usize) -> Option<usize> {
    let needle = format!("\"{key}\"");
    let mut found = 0;
    let mut from = 0;
    while let Some(pos) = text[from..].find(&needle) {
        let at = from + pos;
        from = at + needle.len();
        if text[from..].trim_start().starts_with(':') {
            if found == nth {
                return Some(text[..at].matches('\n').count() + 1);
            }
            found += 1;
        }
    }
    None
}
